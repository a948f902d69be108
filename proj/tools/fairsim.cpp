// fairsim command-line entry point. Every subcommand reads its settings from
// an optional --config JSON file, overlays the explicit flags, and writes its
// artifacts atomically with the effective config and its hash embedded.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fairsim/fairsim.hpp"

namespace fs = std::filesystem;
using namespace fairsim;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing

struct Context {
  std::string command;
  RunConfig config;
  std::string hash;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void finalize() { hash = config_hash(config); }

  json provenance() const { return {{"config_hash", hash}, {"config", to_json(config)}}; }

  void log(const std::string& msg) const { std::cerr << "[fairsim " << command << "] " << msg << '\n'; }

  void done() const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream s;
    s << "seed=" << seed << " config_hash=" << hash << " wall=" << secs << "s";
    log(s.str());
  }
};

template <class T>
void overlay(const CLI::Option* opt, const T& value, T& field) {
  if (opt->count() > 0) field = value;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file_atomic(path, text);
}

/// Binary and CSV artifacts carry their provenance in `<artifact>.json`.
fs::path sidecar(const fs::path& artifact) { return fs::path(artifact.string() + ".json"); }

StorePtr load_store_dir(const fs::path& dir) {
  return std::make_shared<const EmbeddingStore>(ingest(dir / "store.femb", dir / "meta.jsonl"));
}

Vocabulary load_vocab(const fs::path& path) {
  try {
    return Vocabulary::from_json(json::parse(detail::read_file(path)));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<Prototype> load_prototypes(const std::string& list) {
  std::vector<Prototype> out;
  for (const auto& p : split_list(list)) out.push_back(load_prototype(p));
  return out;
}

StoreView select_rows(const StorePtr& store, const std::string& subset, const SplitSpec& split_spec) {
  if (subset == "all") return StoreView::all(store);
  const Split s = split(store, split_spec);
  return subset == "train" ? s.train : s.test;
}

/// Bias-word queries: a JSONL query file, or a plain word list compiled
/// through the toy encoder with the standard prompt template.
std::vector<NamedQuery> words_to_queries(const std::vector<std::string>& words, const Vocabulary& vocab) {
  ToyEncoder encoder(vocab);
  std::vector<NamedQuery> out;
  for (const auto& w : words) {
    Vec q = encoder.encode_text(bias_prompt(w));
    out.push_back({w, q / norm(q)});
  }
  return out;
}

std::vector<std::string> read_words(const fs::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  if (words.empty()) fail(ErrorCode::MalformedFile, path.string() + " has no words");
  return words;
}

std::vector<NamedQuery> load_bias_queries(const fs::path& store_dir, const std::string& file,
                                          const std::string& template_encoder,
                                          const std::string& vocab_file) {
  if (!template_encoder.empty()) {
    if (template_encoder != "toy")
      fail(ErrorCode::InvalidArgument, "--template-from-encoder supports only 'toy'");
    const Vocabulary vocab = load_vocab(vocab_file.empty() ? store_dir / "vocab.json" : fs::path(vocab_file));
    std::vector<std::string> words;
    if (file.empty()) {
      for (const auto& [w, a] : SynthSpec::default_affinities()) words.push_back(w);
    } else {
      words = read_words(file);
    }
    return words_to_queries(words, vocab);
  }
  const fs::path path = file.empty() ? store_dir / "queries.jsonl" : fs::path(file);
  if (path.extension() == ".jsonl") return read_queries_jsonl(path);
  const Vocabulary vocab = load_vocab(vocab_file.empty() ? store_dir / "vocab.json" : fs::path(vocab_file));
  return words_to_queries(read_words(path), vocab);
}

DimMask load_mask(const fs::path& path) {
  DimMask m;
  try {
    const json j = json::parse(detail::read_file(path));
    m.dim = j.at("dim").get<std::size_t>();
    m.dropped = j.at("dropped").get<std::vector<std::size_t>>();
    m.scores = j.value("scores", std::vector<double>{});
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
  return m;
}

/// The representation an eval runs against: vanilla, an RRM, or a CLIP-clip mask.
struct Representation {
  std::optional<Rrm> rrm;
  std::optional<DimMask> mask;

  StoreView images(const StoreView& v) const {
    if (rrm) return apply_rrm(v, *rrm);
    if (mask) return clip_clip_apply(v, *mask);
    return v;
  }
  /// Text-side vectors only change under a mask; RRM acts on images alone.
  Vec text(const Vec& q) const { return mask ? clip_clip_apply(q, *mask) : q; }
};

Representation load_representation(const std::string& rrm_file, const std::string& mask_file,
                                   const std::string& attr) {
  if (!rrm_file.empty() && !mask_file.empty())
    fail(ErrorCode::InvalidArgument, "--rrm and --mask are mutually exclusive");
  Representation r;
  if (!rrm_file.empty()) r.rrm = load_rrm(rrm_file, attr);
  if (!mask_file.empty()) r.mask = load_mask(mask_file);
  return r;
}

Vec read_query_embedding(const fs::path& path, std::size_t dim) {
  const std::string bytes = detail::read_file(path);
  std::vector<float> values;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "FEMB", 4) == 0) {
    FembData d = decode_femb(bytes);
    if (d.count != 1) fail(ErrorCode::RowCountMismatch, "query FEMB must hold exactly one row");
    values = std::move(d.values);
  } else {
    if (bytes.size() != dim * sizeof(float))
      fail(ErrorCode::DimMismatch, "raw query has " + std::to_string(bytes.size()) + " bytes, expected " +
                                       std::to_string(dim * sizeof(float)));
    values.resize(dim);
    std::memcpy(values.data(), bytes.data(), bytes.size());
  }
  Vec q(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) q[static_cast<Eigen::Index>(i)] = values[i];
  return q;
}

// ---------------------------------------------------------------------------
// gradcheck: analytic vs numeric gradients at a seeded random point.

GradCheckReport run_gradcheck(const std::string& loss, std::size_t d, std::uint64_t seed) {
  if (d < 2) fail(ErrorCode::InvalidArgument, "--dim must be >= 2");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto vec = [&](std::size_t n) {
    Vec v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
    return v;
  };
  auto mat = [&](std::size_t r, std::size_t c) {
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
    return m;
  };
  const double h = 1e-5, tol = 1e-5;
  const auto di = static_cast<Eigen::Index>(d);
  const Mat m = Mat::Identity(di, di) + 0.3 * mat(d, d);
  auto as_mat = [&](const Vec& x) { return unflatten(x, di, di); };

  if (loss == "apl") {
    const std::size_t n = 10;
    std::vector<float> values;
    std::vector<std::string> ids;
    EmbeddingStore::AttributeMap attrs;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec v = vec(d);
      for (Eigen::Index j = 0; j < v.size(); ++j) values.push_back(static_cast<float>(v[j]));
      ids.push_back("g" + std::to_string(i));
      attrs["a"].push_back(i % 2 ? Label::Positive : Label::Negative);
    }
    auto store = std::make_shared<const EmbeddingStore>(d, values, ids, attrs);
    const StoreView view = StoreView::all(store);
    Vocabulary vocab;
    vocab.dim = d;
    vocab.encoder_seed = mix_seed(seed, 1);
    vocab.anchors["t"] = vec(d);
    ToyEncoder enc(vocab);
    Prototype proto;
    proto.attribute = "a";
    proto.prefix = 0.3 * mat(3, d);
    proto.suffix_tokens = {"t"};
    proto.centers.mid = compute_centers(view, "a", compile_query(proto, enc)).mid;
    const Mat grad = apl_prefix_grad(view, "a", proto, enc).second;
    return gradcheck(
        "apl",
        [&](const Vec& x) {
          Prototype p = proto;
          p.prefix = unflatten(x, proto.prefix.rows(), proto.prefix.cols());
          return apl_loss(view, "a", compile_query(p, enc), proto.centers.mid);
        },
        flatten(proto.prefix), flatten(grad), h, tol);
  }
  const Mat pos = mat(4, d), neg = mat(4, d), rows = mat(6, d);
  const Vec qp = vec(d), qn = vec(d), qt = vec(d);
  if (loss == "bcl")
    return gradcheck(
        "bcl", [&](const Vec& x) { return bcl_grad(pos, neg, qp, qn, as_mat(x), false).loss; },
        flatten(m), flatten(bcl_grad(pos, neg, qp, qn, m).d_matrix), h, tol);
  if (loss == "tfl")
    return gradcheck(
        "tfl", [&](const Vec& x) { return tfl_grad(rows, qt, as_mat(x), false).loss; },
        flatten(m), flatten(tfl_grad(rows, qt, m).d_matrix), h, tol);
  if (loss == "rrm") {
    Prototype bp, bn, tp;
    bp.query = qp;
    bn.query = qn;
    tp.query = qt;
    const RnBatch batch{pos, neg, {rows}};
    const RnPrototypes protos{&bp, &bn, {&tp}};
    const RnConfig cfg;
    return gradcheck(
        "rrm", [&](const Vec& x) { return rn_loss(batch, protos, as_mat(x), cfg); }, flatten(m),
        flatten(rn_loss_grad(batch, protos, m, cfg).d_matrix), h, tol);
  }
  fail(ErrorCode::InvalidArgument, "unknown loss '" + loss + "'");
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return 2;
    case ErrorCategory::Numeric: return 4;
    case ErrorCategory::Data:
    case ErrorCategory::Io: return 3;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairsim: debiasing text-to-image retrieval at the embedding level"};
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "JSON config; explicit flags override it")
      ->check(CLI::ExistingFile);

  // Flags shared by several subcommands.
  std::string store_dir, out, attr, rrm_file, mask_file, label = "eval", subset = "test";
  std::string queries_file, template_encoder, vocab_file;
  std::size_t k = 100;
  std::uint64_t seed = 0;

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and import an embedding store");
  std::string emb_file, meta_file;
  ingest_cmd->add_option("--embeddings", emb_file, "FEMB file")->required();
  ingest_cmd->add_option("--meta", meta_file, "Metadata JSONL")->required();
  ingest_cmd->add_option("--out", out, "Output store directory")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic store with planted directions");
  std::size_t synth_n = 0, synth_dim = 0;
  auto* o_synth_n = synth_cmd->add_option("--n", synth_n, "Rows");
  auto* o_synth_dim = synth_cmd->add_option("--dim", synth_dim, "Dimension");
  auto* o_synth_seed = synth_cmd->add_option("--seed", seed, "Seed");
  synth_cmd->add_option("--out", out, "Output directory")->required();

  // apl
  auto* apl_cmd = app.add_subcommand("apl", "Learn an attribute prototype");
  std::string encoder_id = "toy", token;
  int polarity = 1;
  bool manual = false;
  std::size_t prefix_len = 0, epochs = 0;
  double apl_lr = 0.0;
  apl_cmd->add_option("--store", store_dir, "Store directory")->required();
  apl_cmd->add_option("--attribute", attr, "Attribute name")->required();
  apl_cmd->add_option("--encoder", encoder_id, "toy|bypass")->check(CLI::IsMember({"toy", "bypass"}));
  apl_cmd->add_option("--token", token, "Suffix token (default: the attribute name)");
  apl_cmd->add_option("--polarity", polarity, "+1 or -1")->check(CLI::IsMember({1, -1}));
  apl_cmd->add_option("--vocab", vocab_file, "Vocabulary JSON (default: <store>/vocab.json)");
  apl_cmd->add_flag("--manual", manual, "Skip training; use the hand-written prompt");
  auto* o_prefix = apl_cmd->add_option("--prefix-len", prefix_len, "Learnable prefix rows");
  auto* o_epochs = apl_cmd->add_option("--epochs", epochs, "Epochs");
  auto* o_apl_lr = apl_cmd->add_option("--lr", apl_lr, "Learning rate");
  auto* o_apl_seed = apl_cmd->add_option("--seed", seed, "Seed");
  apl_cmd->add_option("--out", out, "Prototype JSON")->required();

  // train-rrm
  auto* rrm_cmd = app.add_subcommand("train-rrm", "Train the re-representation matrix");
  std::string bias_protos, target_protos, bias_words, tfl_scope;
  double lambda = 0.0, rrm_lr = 0.0;
  std::size_t max_epochs = 0, early_k = 0, patience = 0, batch_pairs = 0;
  rrm_cmd->add_option("--store", store_dir, "Store directory")->required();
  rrm_cmd->add_option("--bias-attr", attr, "Bias attribute")->required();
  rrm_cmd->add_option("--bias-protos", bias_protos, "pos.json,neg.json")->required();
  rrm_cmd->add_option("--target-protos", target_protos, "Comma-separated target prototypes")->required();
  rrm_cmd->add_option("--bias-words", bias_words, "Word list or query JSONL (default: <store>/queries.jsonl)");
  rrm_cmd->add_option("--vocab", vocab_file, "Vocabulary JSON for word lists");
  auto* o_lambda = rrm_cmd->add_option("--lambda", lambda, "BCL weight");
  auto* o_rrm_lr = rrm_cmd->add_option("--lr", rrm_lr, "Learning rate");
  auto* o_max_epochs = rrm_cmd->add_option("--max-epochs", max_epochs, "Epoch cap");
  auto* o_early_k = rrm_cmd->add_option("--early-stop-k", early_k, "k of the early-stopping Bias@k");
  auto* o_patience = rrm_cmd->add_option("--patience", patience, "Epochs without improvement");
  auto* o_batch_pairs = rrm_cmd->add_option("--batch-pairs", batch_pairs, "Pairs per step");
  auto* o_scope = rrm_cmd->add_option("--tfl-scope", tfl_scope, "all|positives")
                      ->check(CLI::IsMember({"all", "positives"}));
  auto* o_rrm_seed = rrm_cmd->add_option("--seed", seed, "Seed");
  rrm_cmd->add_option("--out", out, "Output FRRM file")->required();

  // retrieve
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Top-k retrieval for one query embedding");
  std::string query_file;
  retrieve_cmd->add_option("--store", store_dir, "Store directory")->required();
  retrieve_cmd->add_option("--query-embedding", query_file, "Raw f32 or one-row FEMB")->required();
  retrieve_cmd->add_option("--rrm", rrm_file, "FRRM to apply");
  retrieve_cmd->add_option("--k", k, "Results")->required();
  retrieve_cmd->add_option("--out", out, "Output JSON")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Metrics");
  eval_cmd->require_subcommand(1);
  std::vector<std::size_t> ks;
  std::vector<double> epsilons;
  std::string texts_file, protos;
  double temperature = 0.0;
  std::size_t eval_k = 0;
  CLI::Option* o_eval_k = nullptr;
  CLI::Option* o_ks = nullptr;
  CLI::Option* o_eps = nullptr;
  CLI::Option* o_temp = nullptr;
  auto add_common = [&](CLI::App* c, bool needs_attr) {
    c->add_option("--store", store_dir, "Store directory")->required();
    c->add_option("--rrm", rrm_file, "FRRM to apply to image vectors");
    c->add_option("--mask", mask_file, "CLIP-clip mask JSON");
    c->add_option("--subset", subset, "all|train|test")->check(CLI::IsMember({"all", "train", "test"}));
    c->add_option("--out", out, "Output file")->required();
    auto* a = c->add_option("--attr", attr, "Bias attribute");
    if (needs_attr) a->required();
  };
  auto* eval_bias = eval_cmd->add_subcommand("bias", "Bias@k over bias-word queries");
  add_common(eval_bias, false);
  eval_bias->add_option("--queries", queries_file, "Query JSONL or word list");
  eval_bias->add_option("--template-from-encoder", template_encoder, "Compile words with this encoder");
  eval_bias->add_option("--vocab", vocab_file, "Vocabulary JSON");
  eval_bias->add_option("--label", label, "Source label recorded in the report");
  o_eval_k = eval_bias->add_option("--k", eval_k, "Top-k");
  auto* eval_recall = eval_cmd->add_subcommand("recall", "Paired text-to-image recall@k");
  add_common(eval_recall, false);
  eval_recall->add_option("--texts", texts_file, "Paired text FEMB (default: <store>/texts.femb)");
  eval_recall->add_option("--label", label, "Source label recorded in the report");
  o_ks = eval_recall->add_option("--ks", ks, "Cutoffs")->delimiter(',');
  auto* eval_tas = eval_cmd->add_subcommand("tas-bfd", "TAS/BFD perturbation sweep (CSV)");
  add_common(eval_tas, true);
  eval_tas->add_option("--bias-protos", bias_protos, "pos.json,neg.json")->required();
  eval_tas->add_option("--target-protos", target_protos, "Target prototypes")->required();
  o_eps = eval_tas->add_option("--epsilons", epsilons, "Increasing, including 0")->delimiter(',');
  auto* eval_pca = eval_cmd->add_subcommand("pca", "First two principal components (CSV)");
  add_common(eval_pca, true);
  auto* eval_zs = eval_cmd->add_subcommand("zeroshot", "Zero-shot probability divergence");
  add_common(eval_zs, true);
  eval_zs->add_option("--protos", protos, "a.json,b.json")->required();
  o_temp = eval_zs->add_option("--temperature", temperature, "Softmax scale");

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "Comparison methods");
  base_cmd->require_subcommand(1);
  std::size_t clip_m = 0;
  auto* clip_cmd = base_cmd->add_subcommand("clip-clip", "Drop the m most bias-informative dims");
  clip_cmd->add_option("--store", store_dir, "Store directory")->required();
  clip_cmd->add_option("--attr", attr, "Bias attribute")->default_val("gender");
  clip_cmd->add_option("--m", clip_m, "Dimensions to drop")->required();
  clip_cmd->add_option("--subset", subset, "Rows to rank on")->check(CLI::IsMember({"all", "train", "test"}))
      ->default_val("train");
  clip_cmd->add_option("--out", out, "Mask JSON")->required();
  auto* bsce_cmd = base_cmd->add_subcommand("bsce", "Bias-space concept as a prototype");
  bsce_cmd->add_option("--store", store_dir, "Store directory")->required();
  bsce_cmd->add_option("--attr", attr, "Attribute")->required();
  bsce_cmd->add_option("--subset", subset, "Rows to fit on")->check(CLI::IsMember({"all", "train", "test"}))
      ->default_val("train");
  bsce_cmd->add_option("--out", out, "Prototype JSON")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  std::string loss;
  std::size_t grad_dim = 0;
  grad_cmd->add_option("--loss", loss, "apl|bcl|tfl|rrm")->required()->check(CLI::IsMember({"apl", "bcl", "tfl", "rrm"}));
  grad_cmd->add_option("--dim", grad_dim, "Dimension")->required();
  grad_cmd->add_option("--seed", seed, "Seed")->required();
  grad_cmd->add_option("--out", out, "Report JSON (default: stdout)");

  // report
  auto* report_cmd = app.add_subcommand("report", "Bias-vs-error summary CSV");
  std::string vanilla_bias, vanilla_recall;
  std::vector<std::string> rows;
  report_cmd->add_option("--vanilla-bias", vanilla_bias, "Vanilla bias report")->required();
  report_cmd->add_option("--vanilla-recall", vanilla_recall, "Vanilla recall report");
  report_cmd->add_option("--row", rows, "method,param,bias.json[,recall.json]; repeatable")->required();
  report_cmd->add_option("--out", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help() << '\n';
    return 2;
  }

  Context ctx;
  try {
    if (!config_file.empty()) ctx.config = load_config(config_file);
    RunConfig& cfg = ctx.config;

    if (*ingest_cmd) {
      ctx.command = "ingest";
      ctx.finalize();
      const EmbeddingStore store = ingest(emb_file, meta_file);
      fs::create_directories(out);
      export_store(store, fs::path(out) / "store.femb", fs::path(out) / "meta.jsonl");
      json manifest = ctx.provenance();
      manifest["count"] = store.count();
      manifest["dim"] = store.dim();
      json attrs = json::array();
      for (const auto& [name, l] : store.attributes()) attrs.push_back(name);
      manifest["attributes"] = attrs;
      write_json(fs::path(out) / "manifest.json", manifest);
      ctx.log("ingested " + std::to_string(store.count()) + " rows of dim " + std::to_string(store.dim()));
    } else if (*synth_cmd) {
      ctx.command = "synth";
      overlay(o_synth_n, synth_n, cfg.synth.n);
      overlay(o_synth_dim, synth_dim, cfg.synth.dim);
      overlay(o_synth_seed, seed, cfg.synth.seed);
      ctx.seed = cfg.synth.seed;
      ctx.finalize();
      const SynthData data = generate(cfg.synth);
      write_synth(data, out);
      json manifest = ctx.provenance();
      manifest["count"] = data.store->count();
      manifest["dim"] = data.store->dim();
      write_json(fs::path(out) / "manifest.json", manifest);
    } else if (*apl_cmd) {
      ctx.command = "apl";
      overlay(o_prefix, prefix_len, cfg.apl.n_prefix);
      overlay(o_epochs, epochs, cfg.apl.epochs);
      overlay(o_apl_lr, apl_lr, cfg.apl.lr);
      overlay(o_apl_seed, seed, cfg.apl.seed);
      ctx.seed = cfg.apl.seed;
      ctx.finalize();
      const StorePtr store = load_store_dir(store_dir);
      const Split s = split(store, cfg.split);
      const Vocabulary vocab =
          load_vocab(vocab_file.empty() ? fs::path(store_dir) / "vocab.json" : fs::path(vocab_file));
      const auto encoder = make_encoder(encoder_id, vocab);
      const std::vector<std::string> suffix = {token.empty() ? attr : token};
      Prototype p = manual ? manual_prototype(s.train, attr, suffix, *encoder, polarity)
                           : train_prototype(s.train, attr, suffix, cfg.apl, *encoder, polarity);
      p.config_hash = ctx.hash;
      save_prototype(out, p);
      std::ostringstream msg;
      msg << "prototype " << attr << (polarity > 0 ? "+" : "-") << " held-out accuracy "
          << prototype_accuracy(s.test, attr, p.query, p.centers.mid, p.polarity);
      ctx.log(msg.str());
    } else if (*rrm_cmd) {
      ctx.command = "train-rrm";
      overlay(o_lambda, lambda, cfg.rrm.lambda);
      overlay(o_rrm_lr, rrm_lr, cfg.rrm.lr);
      overlay(o_max_epochs, max_epochs, cfg.rrm.max_epochs);
      overlay(o_early_k, early_k, cfg.rrm.early_stop.k);
      overlay(o_patience, patience, cfg.rrm.early_stop.patience);
      overlay(o_batch_pairs, batch_pairs, cfg.rrm.batch_pairs);
      if (o_scope->count()) cfg.rrm.tfl_scope = tfl_scope == "all" ? TflScope::All : TflScope::Positives;
      overlay(o_rrm_seed, seed, cfg.rrm.seed);
      ctx.seed = cfg.rrm.seed;
      ctx.finalize();
      const StorePtr store = load_store_dir(store_dir);
      const Split s = split(store, cfg.split);
      const auto bias = load_prototypes(bias_protos);
      if (bias.size() != 2) fail(ErrorCode::InvalidArgument, "--bias-protos needs exactly two files");
      const auto targets = load_prototypes(target_protos);
      RnPrototypes ptrs{&bias[0], &bias[1], {}};
      for (const auto& t : targets) ptrs.targets.push_back(&t);
      RnInputs in{s.train, s.test, attr, ptrs, load_bias_queries(store_dir, bias_words, "", vocab_file)};
      RnTrace trace;
      Rrm rrm;
      try {
        rrm = train_rrm(in, cfg.rrm, &trace);
      } catch (const DivergenceError<Rrm>& e) {
        save_rrm(out + ".last_finite", e.last_finite());
        throw;
      }
      save_rrm(out, rrm);
      json meta = ctx.provenance();
      meta["bias_attribute"] = attr;
      meta["dim"] = rrm.dim();
      meta["best_epoch"] = trace.best_epoch;
      meta["best_metric"] = trace.best_metric;
      meta["epoch_metric"] = trace.epoch_metric;
      meta["epoch_loss"] = trace.epoch_loss;
      write_json(sidecar(out), meta);
      std::ostringstream msg;
      msg << "Bias@" << cfg.rrm.early_stop.k << " " << trace.epoch_metric.front() << " -> "
          << trace.best_metric << " (epoch " << trace.best_epoch << ")";
      ctx.log(msg.str());
    } else if (*retrieve_cmd) {
      ctx.command = "retrieve";
      ctx.finalize();
      const StorePtr store = load_store_dir(store_dir);
      StoreView view = StoreView::all(store);
      if (!rrm_file.empty()) view = apply_rrm(view, load_rrm(rrm_file));
      const Vec q = read_query_embedding(query_file, store->dim());
      const auto result = top_k(similarity_set(view, q), k);
      json hits = json::array();
      for (std::size_t r = 0; r < result.ranked.size(); ++r) {
        const auto& h = result.ranked[r];
        hits.push_back({{"rank", r + 1},
                        {"row", view.row(h.position)},
                        {"id", store->ids()[view.row(h.position)]},
                        {"score", h.score}});
      }
      json j = ctx.provenance();
      j["k"] = k;
      j["hits"] = hits;
      write_json(out, j);
    } else if (*eval_cmd) {
      ctx.command = "eval";
      overlay(o_eval_k, eval_k, cfg.metrics.k);
      if (o_ks->count()) cfg.metrics.recall_ks = ks;
      if (o_eps->count()) cfg.metrics.epsilons = epsilons;
      overlay(o_temp, temperature, cfg.metrics.temperature);
      ctx.finalize();
      const StorePtr store = load_store_dir(store_dir);
      if (attr.empty()) attr = cfg.synth.bias_attribute;
      const Representation rep = load_representation(rrm_file, mask_file, attr);
      const StoreView base = select_rows(store, subset, cfg.split);
      const StoreView view = rep.images(base);

      if (*eval_bias) {
        ctx.command = "eval bias";
        auto queries = load_bias_queries(store_dir, queries_file, template_encoder, vocab_file);
        for (auto& q : queries) q.embedding = rep.text(q.embedding);
        const BiasReport r = bias_suite(view, {attr}, queries, cfg.metrics.k, label);
        json j = bias_report_to_json(r);
        j.update(ctx.provenance());
        j["subset"] = subset;
        write_json(out, j);
        ctx.log("mean Bias@" + std::to_string(cfg.metrics.k) + " = " + std::to_string(r.mean_bias));
      } else if (*eval_recall) {
        ctx.command = "eval recall";
        const FembData texts =
            read_femb(texts_file.empty() ? fs::path(store_dir) / "texts.femb" : fs::path(texts_file));
        if (texts.count != store->count())
          fail(ErrorCode::MissingGroundTruth, "texts must pair one-to-one with store rows");
        if (texts.dim != store->dim()) fail(ErrorCode::DimMismatch, "texts dim");
        PairedQueries pq;
        pq.texts.resize(static_cast<Eigen::Index>(view.size()), static_cast<Eigen::Index>(rep.text(Vec::Zero(texts.dim)).size()));
        for (std::size_t p = 0; p < view.size(); ++p) {
          Vec t(static_cast<Eigen::Index>(texts.dim));
          for (std::size_t j = 0; j < texts.dim; ++j)
            t[static_cast<Eigen::Index>(j)] = texts.values[view.row(p) * texts.dim + j];
          pq.texts.row(static_cast<Eigen::Index>(p)) = rep.text(t).transpose();
          pq.truth.push_back(p);
        }
        const RecallReport r = make_recall_report(label, recall_at_k(view, pq, cfg.metrics.recall_ks));
        json j = recall_report_to_json(r);
        j.update(ctx.provenance());
        j["subset"] = subset;
        write_json(out, j);
        ctx.log("mean error = " + std::to_string(r.mean_error));
      } else if (*eval_tas) {
        ctx.command = "eval tas-bfd";
        const auto bias = load_prototypes(bias_protos);
        if (bias.size() != 2) fail(ErrorCode::InvalidArgument, "--bias-protos needs exactly two files");
        std::vector<Vec> targets;
        for (const auto& t : load_prototypes(target_protos)) targets.push_back(rep.text(t.query));
        const auto curve = tas_bfd_sweep(view, attr, targets, rep.text(bias[0].query),
                                         rep.text(bias[1].query), cfg.metrics.epsilons,
                                         cfg.metrics.pairs_seed);
        write_text(out, curve_csv(curve));
        std::vector<double> t, b;
        for (const auto& p : curve.points) {
          t.push_back(p.tas);
          b.push_back(p.bfd);
        }
        json meta = ctx.provenance();
        meta["spearman_tas_bfd"] = spearman(t, b);
        write_json(sidecar(out), meta);
      } else if (*eval_pca) {
        ctx.command = "eval pca";
        const Pca2d p = pca_2d(view, attr);
        write_text(out, pca_csv(p, view));
        json meta = ctx.provenance();
        meta["centroid_distance"] = p.centroid_distance();
        meta["variance"] = {p.variance_x, p.variance_y};
        meta["degenerate"] = p.degenerate;
        write_json(sidecar(out), meta);
        ctx.log("centroid distance " + std::to_string(p.centroid_distance()));
      } else if (*eval_zs) {
        ctx.command = "eval zeroshot";
        const auto pr = load_prototypes(protos);
        if (pr.size() != 2) fail(ErrorCode::InvalidArgument, "--protos needs exactly two files");
        const auto r = zero_shot_divergence(view, attr, rep.text(pr[0].query), rep.text(pr[1].query),
                                            cfg.metrics.temperature);
        json j = ctx.provenance();
        j["attribute"] = attr;
        j["mean_pos"] = r.mean_pos;
        j["mean_neg"] = r.mean_neg;
        j["divergence"] = r.divergence;
        j["temperature"] = cfg.metrics.temperature;
        write_json(out, j);
      }
    } else if (*base_cmd) {
      ctx.command = "baseline";
      ctx.finalize();
      const StorePtr store = load_store_dir(store_dir);
      const StoreView view = select_rows(store, subset, cfg.split);
      if (*clip_cmd) {
        ctx.command = "baseline clip-clip";
        const DimMask mask = clip_clip_mask(clip_clip_rank(view, attr), clip_m);
        json j = ctx.provenance();
        j["dim"] = mask.dim;
        j["dropped"] = mask.dropped;
        j["scores"] = mask.scores;
        j["attribute"] = attr;
        write_json(out, j);
      } else {
        ctx.command = "baseline bsce";
        Prototype p = bsce_prototype(view, attr);
        p.config_hash = ctx.hash;
        save_prototype(out, p);
      }
    } else if (*grad_cmd) {
      ctx.command = "gradcheck";
      ctx.seed = seed;
      ctx.finalize();
      const auto r = run_gradcheck(loss, grad_dim, seed);
      json j = ctx.provenance();
      j.update({{"loss", r.id},
                {"dim", grad_dim},
                {"seed", seed},
                {"coordinates", r.coordinates},
                {"max_rel_err", r.max_rel_err},
                {"h", r.h},
                {"tol", r.tol},
                {"passed", r.passed}});
      if (out.empty())
        std::cout << j.dump(2) << '\n';
      else
        write_json(out, j);
      if (!r.passed) {
        ctx.log("gradient mismatch");
        ctx.done();
        return 4;
      }
    } else if (*report_cmd) {
      ctx.command = "report";
      ctx.finalize();
      auto read_json = [](const fs::path& p) {
        try {
          return json::parse(detail::read_file(p));
        } catch (const json::parse_error& e) {
          fail(ErrorCode::MalformedFile, p.string() + ": " + e.what());
        }
      };
      ReportRow vanilla{"vanilla", "", bias_report_from_json(read_json(vanilla_bias)), std::nullopt};
      if (!vanilla_recall.empty()) vanilla.recall = recall_report_from_json(read_json(vanilla_recall));
      std::vector<ReportRow> report_rows;
      for (const auto& spec : rows) {
        std::vector<std::string> parts;
        std::string part;
        std::istringstream in(spec);
        while (std::getline(in, part, ',')) parts.push_back(part);
        if (parts.size() < 3 || parts.size() > 4)
          fail(ErrorCode::InvalidArgument, "--row expects method,param,bias.json[,recall.json]");
        ReportRow r{parts[0], parts[1], bias_report_from_json(read_json(parts[2])), std::nullopt};
        if (parts.size() == 4) r.recall = recall_report_from_json(read_json(parts[3]));
        report_rows.push_back(std::move(r));
      }
      write_text(out, summary_csv(vanilla, report_rows));
      write_json(sidecar(out), ctx.provenance());
    }
    ctx.done();
    return 0;
  } catch (const Error& e) {
    std::cerr << "[fairsim " << ctx.command << "] error: " << e.what() << '\n';
    return exit_code(category(e.code()));
  } catch (const std::exception& e) {
    std::cerr << "[fairsim " << ctx.command << "] error: " << e.what() << '\n';
    return 3;
  }
}
