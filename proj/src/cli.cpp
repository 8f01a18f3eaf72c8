#include "stainkit/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "stainkit/errors.hpp"
#include "stainkit/feature_bag.hpp"
#include "stainkit/kernels.hpp"
#include "stainkit/mil_classifier.hpp"
#include "stainkit/slide_io.hpp"
#include "stainkit/stain_stats.hpp"
#include "stainkit/stain_transformer.hpp"
#include "stainkit/synth_bench.hpp"
#include "stainkit/wsaug.hpp"

namespace stainkit::cli {

namespace {

namespace fs = std::filesystem;

// Known configuration keys (union over all subcommands) with their
// documented defaults. Values resolve flag > --set > config file > default.
const std::map<std::string, std::string>& key_defaults() {
  static const std::map<std::string, std::string> defaults = {
      {"bench.n_train", "200"},
      {"bench.n_id_test", "50"},
      {"bench.n_ood_test", "100"},
      {"bench.tiles_per_slide", "16"},
      {"bench.tile_size", "64"},
      {"bench.feature_dim", "32"},
      {"bench.content_lambda", "0.8"},
      {"bench.content_chroma", "8"},
      {"bench.aug_widen", "1.5"},
      {"bench.ood_shift_l", "-10"},
      {"bench.ood_scale_ab", "0.6"},
      {"bench.ood_scale_dl", "0.75"},
      {"wsaug.copies", "3"},
      {"lsa.p", "0.5"},
      {"encoder.dim", "32"},
      {"st.epochs", "100"},
      {"st.batch_groups", "8"},
      {"st.lr", "0.0001"},
      {"st.lr_decay", "0.98"},
      {"st.layers", "2"},
      {"st.experts", "4"},
      {"mil.epochs", "100"},
      {"mil.batch_size", "32"},
      {"mil.lr", "0.0001"},
      {"mil.attn_dim", "64"},
  };
  return defaults;
}

class Config {
 public:
  void load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ValidationError("config " + path.string() + ":" +
                              std::to_string(lineno) +
                              ": expected 'key = value'");
      set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
  }

  void apply_set(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  std::string get_raw(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return key_defaults().at(key);
  }

  long long get_int(const std::string& key, long long lo,
                    long long hi = std::numeric_limits<long long>::max()) const {
    const std::string raw = get_raw(key);
    long long v = 0;
    try {
      std::size_t pos = 0;
      v = std::stoll(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
    } catch (const std::exception&) {
      throw ValidationError(key + ": expected an integer, got '" + raw + "'");
    }
    check_range(key, static_cast<double>(v), static_cast<double>(lo),
                static_cast<double>(hi));
    return v;
  }

  double get_double(const std::string& key, double lo, double hi) const {
    const std::string raw = get_raw(key);
    double v = 0;
    try {
      std::size_t pos = 0;
      v = std::stod(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
    } catch (const std::exception&) {
      throw ValidationError(key + ": expected a number, got '" + raw + "'");
    }
    check_range(key, v, lo, hi);
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  void set(const std::string& key, const std::string& value) {
    if (key_defaults().find(key) == key_defaults().end())
      throw ValidationError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  static void check_range(const std::string& key, double v, double lo,
                          double hi) {
    if (v < lo || v > hi)
      throw ValidationError(key + ": value " + std::to_string(v) +
                            " outside [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
  }

  std::map<std::string, std::string> values_;
};

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = 1;
  std::string kernel = "auto";
  std::uint64_t seed = 0;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void add_to(CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "key = value config file (default: $STAINKIT_CONFIG)");
    sub->add_option("--set", sets, "override a config key, e.g. --set st.lr=1e-4")
        ->take_all();
    threads_opt = sub->add_option("--threads", threads,
                                  "worker threads; 1 is bit-reproducible")
                      ->check(CLI::Range(1, 256));
    sub->add_option("--kernel", kernel, "compute kernels: auto|scalar|avx2")
        ->check(CLI::IsMember({"auto", "scalar", "avx2"}));
    seed_opt = sub->add_option("--seed", seed, "master RNG seed");
  }

  Config resolve() const {
    Config cfg;
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("STAINKIT_CONFIG")) path = env;
    }
    if (!path.empty()) cfg.load_file(path);
    for (const auto& kv : sets) cfg.apply_set(kv);
    if (!kernels::select(kernel))
      throw ValidationError("kernel '" + kernel +
                            "' is not supported on this machine");
    return cfg;
  }
};

slide::SlideManifest load_manifest_arg(const std::string& arg) {
  return slide::load_manifest(fs::path(arg));
}

std::vector<slide::SlideManifest> load_manifests(
    const std::vector<std::string>& args) {
  std::vector<slide::SlideManifest> out;
  out.reserve(args.size());
  for (const auto& a : args) out.push_back(load_manifest_arg(a));
  return out;
}

// Each argument is a .fbag file or a directory scanned for *.fbag.
std::vector<fs::path> collect_bag_paths(const std::vector<std::string>& args) {
  std::vector<fs::path> paths;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p))
        if (entry.path().extension() == ".fbag") found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      if (found.empty())
        throw ValidationError("no .fbag files in directory " + p.string());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.push_back(p);
    }
  }
  if (paths.empty()) throw ValidationError("no feature bags given");
  return paths;
}

std::vector<nn::FeatureBag> load_bags(const std::vector<std::string>& args) {
  std::vector<nn::FeatureBag> bags;
  for (const auto& p : collect_bag_paths(args)) bags.push_back(nn::load_bag(p));
  return bags;
}

int run_stats(const Common& common, const std::string& manifest,
              std::ostream& out) {
  common.resolve();
  const auto m = load_manifest_arg(manifest);
  const auto style = stats::compute_slide_style(m, common.threads);
  out << stats::to_json(style).dump() << '\n';
  return 0;
}

int run_fit_prior(const Common& common,
                  const std::vector<std::string>& manifests,
                  const std::string& out_path, std::ostream& out) {
  common.resolve();
  std::vector<stats::StyleDescriptor> styles;
  for (const auto& m : load_manifests(manifests))
    styles.push_back(stats::compute_slide_style(m, common.threads));
  const auto prior = wsaug::StylePrior::fit(styles);
  wsaug::save_prior(prior, out_path);
  out << wsaug::to_json(prior).dump() << '\n';
  return 0;
}

int run_augment(const Common& common, const std::vector<std::string>& manifests,
                const std::string& prior_path, const std::string& out_dir,
                std::optional<int> copies_flag, std::ostream& out) {
  const Config cfg = common.resolve();
  wsaug::DatasetAugmentOptions opts;
  opts.copies = copies_flag ? *copies_flag
                            : static_cast<int>(cfg.get_int("wsaug.copies", 1));
  opts.seed = common.seed;
  const auto prior = wsaug::load_prior(prior_path);
  const auto results =
      wsaug::augment_dataset(load_manifests(manifests), prior, out_dir, opts);
  double max_clamp = 0;
  for (const auto& r : results) max_clamp = std::max(max_clamp, r.clamp_fraction);
  out << nlohmann::json({{"augmented", results.size()},
                         {"copies", opts.copies},
                         {"max_clamp_fraction", max_clamp}})
             .dump()
      << '\n';
  return 0;
}

int run_extract(const Common& common, const std::vector<std::string>& manifests,
                const std::string& out_dir, std::optional<int> dim_flag,
                std::ostream& out) {
  const Config cfg = common.resolve();
  const auto dim = static_cast<std::size_t>(
      dim_flag ? *dim_flag : cfg.get_int("encoder.dim", 1, 4096));
  const auto enc = synth::FrozenEncoder::create(dim);
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  // Group bags by source lineage: originals first, renditions after.
  std::map<std::string, std::vector<std::pair<bool, std::string>>> groups;
  std::size_t n_bags = 0;
  for (const auto& m : load_manifests(manifests)) {
    const nn::FeatureBag bag = enc.encode_slide(m);
    const std::string file = m.slide_id + ".fbag";
    nn::save_bag(bag, dir / file);
    ++n_bags;
    const std::string key =
        m.provenance ? m.provenance->source_slide_id : m.slide_id;
    groups[key].emplace_back(!m.provenance.has_value(), file);
  }
  nlohmann::json jgroups = nlohmann::json::array();
  for (auto& [slide_id, members] : groups) {
    std::stable_sort(members.begin(), members.end(),
                     [](const auto& a, const auto& b) {
                       return a.first > b.first;  // originals first
                     });
    nlohmann::json bags = nlohmann::json::array();
    for (const auto& [is_original, file] : members) bags.push_back(file);
    jgroups.push_back({{"slide_id", slide_id}, {"bags", bags}});
  }
  const nlohmann::json doc = {{"schema_version", 1}, {"groups", jgroups}};
  std::ofstream gout(dir / "groups.json");
  if (!gout) throw IoError("cannot write " + (dir / "groups.json").string());
  gout << doc.dump(2) << '\n';
  out << nlohmann::json({{"bags", n_bags}, {"groups", groups.size()}}).dump()
      << '\n';
  return 0;
}

std::vector<st::SlideGroup> load_groups_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  std::vector<st::SlideGroup> groups;
  try {
    if (doc.at("schema_version").get<int>() != 1)
      throw ValidationError(path.string() + ": unsupported schema_version");
    const fs::path base = path.parent_path();
    for (const auto& gj : doc.at("groups")) {
      st::SlideGroup g;
      for (const auto& bj : gj.at("bags"))
        g.bags.push_back(nn::load_bag(base / bj.get<std::string>()));
      groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (groups.empty()) throw ValidationError(path.string() + ": no groups");
  return groups;
}

int run_train_st(const Common& common, const std::string& groups_path,
                 const std::string& prior_path, const std::string& out_path,
                 std::ostream& out) {
  const Config cfg = common.resolve();
  const auto groups = load_groups_file(groups_path);
  const auto prior = wsaug::load_prior(prior_path);

  st::StConfig sc;
  sc.dim = groups.front().bags.front().features.cols;
  sc.n_layers = static_cast<std::size_t>(cfg.get_int("st.layers", 1, 64));
  sc.n_experts = static_cast<std::size_t>(cfg.get_int("st.experts", 1, 64));
  rng::Stream init(rng::derive_seed(common.seed, "st/init"));
  st::StParams params =
      st::StParams::create(sc, st::StyleNormalizer::from_prior(prior), init);

  st::StTrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("st.epochs", 1, 1000000));
  tc.batch_groups = static_cast<int>(cfg.get_int("st.batch_groups", 1, 1 << 20));
  tc.lr = cfg.get_double("st.lr", 1e-12, 10.0);
  tc.lr_decay = cfg.get_double("st.lr_decay", 1e-6, 1.0);
  tc.seed = common.seed;
  const auto result = st::st_train(params, groups, tc);
  st::save_st(params, out_path);
  out << nlohmann::json({{"epochs", tc.epochs},
                         {"final_loss", result.epoch_loss.back()},
                         {"checkpoint", out_path}})
             .dump()
      << '\n';
  return 0;
}

int run_train_mil(const Common& common, const std::vector<std::string>& bag_args,
                  const std::string& st_path, const std::string& prior_path,
                  std::optional<double> p_flag, const std::string& out_path,
                  std::ostream& out) {
  const Config cfg = common.resolve();
  const auto bags = load_bags(bag_args);

  mil::LsaConfig lsa;
  lsa.p = p_flag ? *p_flag : cfg.get_double("lsa.p", 0.0, 1.0);
  if (lsa.p < 0.0 || lsa.p > 1.0)
    throw ValidationError("lsa.p: probability must be in [0,1]");
  std::optional<st::StParams> st_params;
  std::optional<wsaug::StylePrior> prior;
  if (lsa.p > 0.0) {
    if (st_path.empty() || prior_path.empty())
      throw ValidationError(
          "train-mil: --st and --prior are required when lsa.p > 0 "
          "(pass --p 0 to train without augmentation)");
    st_params = st::load_st(st_path);
    prior = wsaug::load_prior(prior_path);
    lsa.st = &*st_params;
    lsa.prior = &*prior;
  }

  mil::MilConfig mc;
  mc.dim = bags.front().features.cols;
  mc.attn_dim = static_cast<std::size_t>(cfg.get_int("mil.attn_dim", 1, 8192));
  rng::Stream init(rng::derive_seed(common.seed, "mil/init"));
  mil::MilParams params = mil::MilParams::create(mc, init);

  mil::MilTrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("mil.epochs", 1, 1000000));
  tc.batch_size = static_cast<int>(cfg.get_int("mil.batch_size", 1, 1 << 20));
  tc.lr = cfg.get_double("mil.lr", 1e-12, 10.0);
  tc.seed = common.seed;
  const auto result = mil::train_mil(params, bags, lsa, tc);
  mil::save_mil(params, out_path);
  out << nlohmann::json({{"epochs", tc.epochs},
                         {"p", lsa.p},
                         {"final_loss", result.epoch_loss.back()},
                         {"checkpoint", out_path}})
             .dump()
      << '\n';
  return 0;
}

int run_eval(const Common& common, const std::vector<std::string>& bag_args,
             const std::string& mil_path, std::ostream& out) {
  common.resolve();
  const auto bags = load_bags(bag_args);
  const auto params = mil::load_mil(mil_path);
  const auto report = mil::evaluate(params, bags);
  nlohmann::json j = {{"acc", report.acc},
                      {"n_pos", report.n_pos},
                      {"n_neg", report.n_neg}};
  j["auc"] = report.auc ? nlohmann::json(*report.auc) : nlohmann::json();
  out << j.dump() << '\n';
  return 0;
}

int run_bench(const Common& common, const std::string& protocol,
              const std::string& out_dir, std::optional<double> p_flag,
              std::ostream& out) {
  const Config cfg = common.resolve();
  synth::SynthConfig sc;
  sc.n_train = static_cast<int>(cfg.get_int("bench.n_train", 2, 1000000));
  sc.n_id_test = static_cast<int>(cfg.get_int("bench.n_id_test", 2, 1000000));
  sc.n_ood_test = static_cast<int>(cfg.get_int("bench.n_ood_test", 2, 1000000));
  sc.tiles_per_slide =
      static_cast<int>(cfg.get_int("bench.tiles_per_slide", 1, 65536));
  sc.tile_size = static_cast<int>(cfg.get_int("bench.tile_size", 8, 4096));
  sc.feature_dim =
      static_cast<std::size_t>(cfg.get_int("bench.feature_dim", 1, 4096));
  sc.content_lambda = cfg.get_double("bench.content_lambda", 0.0, 1000.0);
  sc.content_chroma = cfg.get_double("bench.content_chroma", 0.0, 1000.0);
  sc.aug_widen = cfg.get_double("bench.aug_widen", 1e-3, 100.0);
  sc.ood_shift_l = cfg.get_double("bench.ood_shift_l", -100.0, 100.0);
  sc.ood_scale_ab = cfg.get_double("bench.ood_scale_ab", 1e-6, 100.0);
  sc.ood_scale_dl = cfg.get_double("bench.ood_scale_dl", 1e-6, 100.0);
  sc.seed = common.seed;

  synth::BenchOptions opts;
  opts.protocol = protocol;
  opts.out_dir = out_dir;
  opts.threads = common.threads;
  opts.copies = static_cast<int>(cfg.get_int("wsaug.copies", 1, 64));
  opts.lsa_p = p_flag ? *p_flag : cfg.get_double("lsa.p", 0.0, 1.0);
  opts.attn_dim = static_cast<std::size_t>(cfg.get_int("mil.attn_dim", 1, 8192));
  opts.st_layers = static_cast<std::size_t>(cfg.get_int("st.layers", 1, 64));
  opts.st_experts = static_cast<std::size_t>(cfg.get_int("st.experts", 1, 64));
  opts.st_train.epochs = static_cast<int>(cfg.get_int("st.epochs", 1, 1000000));
  opts.st_train.batch_groups =
      static_cast<int>(cfg.get_int("st.batch_groups", 1, 1 << 20));
  opts.st_train.lr = cfg.get_double("st.lr", 1e-12, 10.0);
  opts.st_train.lr_decay = cfg.get_double("st.lr_decay", 1e-6, 1.0);
  opts.mil_train.epochs =
      static_cast<int>(cfg.get_int("mil.epochs", 1, 1000000));
  opts.mil_train.batch_size =
      static_cast<int>(cfg.get_int("mil.batch_size", 1, 1 << 20));
  opts.mil_train.lr = cfg.get_double("mil.lr", 1e-12, 10.0);

  const nlohmann::json report = synth::run_benchmark(sc, opts);

  nlohmann::json arms = nlohmann::json::object();
  for (const auto& [name, arm] : report.at("arms").items())
    arms[name] = {{"id_auc", arm.at("id").at("auc")},
                  {"ood_auc", arm.at("ood").at("auc")}};
  nlohmann::json summary = {{"protocol", protocol},
                            {"seed", sc.seed},
                            {"report", (fs::path(out_dir) / "report.json").string()},
                            {"arms", arms}};
  if (report.contains("st")) {
    summary["mae_before"] = report.at("st").at("mae_before");
    summary["mae_after"] = report.at("st").at("mae_after");
  }
  out << summary.dump() << '\n';
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Stain-robust whole-slide pipeline: WSI-level stain "
               "augmentation, feature-space style transfer, and MIL "
               "classification"};
  app.name("stainkit");
  app.require_subcommand(1);

  int rc = 0;
  // stats
  auto* stats_cmd =
      app.add_subcommand("stats", "Slide-level LAB style of one manifest");
  auto stats_common = std::make_shared<Common>();
  auto stats_manifest = std::make_shared<std::string>();
  stats_common->add_to(stats_cmd);
  stats_cmd->add_option("--manifest", *stats_manifest,
                        "slide manifest.json or its directory")
      ->required();
  stats_cmd->callback(
      [&rc, stats_common, stats_manifest, &out] {
        rc = run_stats(*stats_common, *stats_manifest, out);
      });

  // fit-prior
  auto* fit_cmd = app.add_subcommand(
      "fit-prior", "Fit the Gaussian style prior over a slide corpus");
  auto fit_common = std::make_shared<Common>();
  auto fit_manifests = std::make_shared<std::vector<std::string>>();
  auto fit_out = std::make_shared<std::string>();
  fit_common->add_to(fit_cmd);
  fit_cmd->add_option("manifests", *fit_manifests, "slide manifests (>= 2)")
      ->required();
  fit_cmd->add_option("--out", *fit_out, "output prior JSON path")->required();
  fit_cmd->callback([&rc, fit_common, fit_manifests, fit_out, &out] {
    rc = run_fit_prior(*fit_common, *fit_manifests, *fit_out, out);
  });

  // augment
  auto* aug_cmd = app.add_subcommand(
      "augment", "Write style-augmented copies of whole slides");
  auto aug_common = std::make_shared<Common>();
  auto aug_manifests = std::make_shared<std::vector<std::string>>();
  auto aug_prior = std::make_shared<std::string>();
  auto aug_out = std::make_shared<std::string>();
  auto aug_copies = std::make_shared<int>(0);
  aug_common->add_to(aug_cmd);
  aug_cmd->add_option("manifests", *aug_manifests, "slide manifests")
      ->required();
  aug_cmd->add_option("--prior", *aug_prior, "style prior JSON")->required();
  aug_cmd->add_option("--out", *aug_out, "output directory")->required();
  auto* copies_opt =
      aug_cmd->add_option("--copies", *aug_copies, "renditions per slide");
  aug_cmd->callback(
      [&rc, aug_common, aug_manifests, aug_prior, aug_out, aug_copies,
       copies_opt, &out] {
        rc = run_augment(*aug_common, *aug_manifests, *aug_prior, *aug_out,
                         copies_opt->count() ? std::optional<int>(*aug_copies)
                                             : std::nullopt,
                         out);
      });

  // extract
  auto* ext_cmd = app.add_subcommand(
      "extract", "Encode slides to feature bags with the frozen encoder");
  auto ext_common = std::make_shared<Common>();
  auto ext_manifests = std::make_shared<std::vector<std::string>>();
  auto ext_out = std::make_shared<std::string>();
  auto ext_dim = std::make_shared<int>(0);
  ext_common->add_to(ext_cmd);
  ext_cmd->add_option("manifests", *ext_manifests, "slide manifests")
      ->required();
  ext_cmd->add_option("--out", *ext_out, "output directory")->required();
  auto* dim_opt = ext_cmd->add_option("--dim", *ext_dim, "feature dimension");
  ext_cmd->callback([&rc, ext_common, ext_manifests, ext_out, ext_dim, dim_opt,
                     &out] {
    rc = run_extract(*ext_common, *ext_manifests, *ext_out,
                     dim_opt->count() ? std::optional<int>(*ext_dim)
                                      : std::nullopt,
                     out);
  });

  // train-st
  auto* tst_cmd = app.add_subcommand(
      "train-st", "Train the feature-space style transfer network");
  auto tst_common = std::make_shared<Common>();
  auto tst_groups = std::make_shared<std::string>();
  auto tst_prior = std::make_shared<std::string>();
  auto tst_out = std::make_shared<std::string>();
  tst_common->add_to(tst_cmd);
  tst_cmd->add_option("--groups", *tst_groups,
                      "groups.json written by extract")
      ->required();
  tst_cmd->add_option("--prior", *tst_prior, "style prior JSON")->required();
  tst_cmd->add_option("--out", *tst_out, "output checkpoint path")->required();
  tst_cmd->callback([&rc, tst_common, tst_groups, tst_prior, tst_out, &out] {
    rc = run_train_st(*tst_common, *tst_groups, *tst_prior, *tst_out, out);
  });

  // train-mil
  auto* tml_cmd = app.add_subcommand(
      "train-mil", "Train the attention MIL classifier (optionally with "
                   "latent style augmentation)");
  auto tml_common = std::make_shared<Common>();
  auto tml_bags = std::make_shared<std::vector<std::string>>();
  auto tml_st = std::make_shared<std::string>();
  auto tml_prior = std::make_shared<std::string>();
  auto tml_p = std::make_shared<double>(0.0);
  auto tml_out = std::make_shared<std::string>();
  tml_common->add_to(tml_cmd);
  tml_cmd->add_option("bags", *tml_bags, ".fbag files or directories")
      ->required();
  tml_cmd->add_option("--st", *tml_st, "stain transformer checkpoint");
  tml_cmd->add_option("--prior", *tml_prior, "style prior JSON");
  auto* p_opt = tml_cmd->add_option("--p", *tml_p,
                                    "augmentation probability in [0,1]");
  tml_cmd->add_option("--out", *tml_out, "output checkpoint path")->required();
  tml_cmd->callback([&rc, tml_common, tml_bags, tml_st, tml_prior, tml_p,
                     p_opt, tml_out, &out] {
    rc = run_train_mil(*tml_common, *tml_bags, *tml_st, *tml_prior,
                       p_opt->count() ? std::optional<double>(*tml_p)
                                      : std::nullopt,
                       *tml_out, out);
  });

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate a MIL checkpoint on feature bags");
  auto eval_common = std::make_shared<Common>();
  auto eval_bags = std::make_shared<std::vector<std::string>>();
  auto eval_mil = std::make_shared<std::string>();
  eval_common->add_to(eval_cmd);
  eval_cmd->add_option("bags", *eval_bags, ".fbag files or directories")
      ->required();
  eval_cmd->add_option("--mil", *eval_mil, "MIL checkpoint")->required();
  eval_cmd->callback([&rc, eval_common, eval_bags, eval_mil, &out] {
    rc = run_eval(*eval_common, *eval_bags, *eval_mil, out);
  });

  // bench
  auto* bench_cmd = app.add_subcommand(
      "bench", "Run a named protocol on the synthetic benchmark");
  auto bench_common = std::make_shared<Common>();
  auto bench_protocol = std::make_shared<std::string>();
  auto bench_out = std::make_shared<std::string>();
  auto bench_p = std::make_shared<double>(0.0);
  bench_common->add_to(bench_cmd);
  bench_cmd
      ->add_option("--protocol", *bench_protocol,
                   "baseline|wsaug-offline|lsa|p-sweep|patch-inconsistent|suite")
      ->required();
  bench_cmd->add_option("--out", *bench_out, "output directory")->required();
  auto* bp_opt = bench_cmd->add_option(
      "--p", *bench_p, "augmentation probability for the lsa protocol");
  bench_cmd->callback([&rc, bench_common, bench_protocol, bench_out, bench_p,
                       bp_opt, &out] {
    rc = run_bench(*bench_common, *bench_protocol, *bench_out,
                   bp_opt->count() ? std::optional<double>(*bench_p)
                                   : std::nullopt,
                   out);
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}

}  // namespace stainkit::cli
