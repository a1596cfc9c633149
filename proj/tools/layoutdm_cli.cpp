#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutdm/layoutdm.hpp"

using namespace layoutdm;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  LAYOUTDM_REQUIRE(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to `path`, or stdout when the path is empty or "-".
void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "cannot write " + path);
  out << text;
}

std::vector<nlohmann::json> read_json_lines(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<nlohmann::json> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(number) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<Layout> read_layouts(const fs::path& path) {
  std::vector<Layout> out;
  for (const auto& j : read_json_lines(path)) out.push_back(layout_from_json(j));
  return out;
}

std::string layouts_jsonl(const std::vector<Layout>& layouts) {
  std::string out;
  for (const auto& l : layouts) out += to_json(l).dump() + "\n";
  return out;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

// Expands a JSON config object into "--key=value" arguments for keys not already given.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(read_text(config_path));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, config_path + ": " + ex.what());
  }
  LAYOUTDM_REQUIRE(config.is_object(), ErrorCode::kParseError, "config must be a JSON object");
  for (const auto& [key, value] : config.items()) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args) given = given || a == flag || a.rfind(flag + "=", 0) == 0;
    if (given) continue;
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        text += (i ? "," : "") + (value[i].is_string() ? value[i].get<std::string>() : value[i].dump());
      }
    } else {
      text = value.dump();
    }
    args.push_back(flag + "=" + text);
  }
  return args;
}

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
};

// ---------------------------------------------------------------- synth

struct SynthArgs {
  SyntheticSpec spec;
  std::string out;
};

void run_synth(const SynthArgs& a, const Globals& g) {
  SyntheticSpec spec = a.spec;
  spec.seed = g.seed;
  const Corpus corpus = gen_synthetic(spec);
  save_corpus(corpus, a.out);
  std::cerr << "wrote " << corpus.size() << " layouts (" << corpus.train.size() << "/" << corpus.val.size() << "/"
            << corpus.test.size() << ") to " << a.out << "\n";
}

// ---------------------------------------------------------------- corpus loading

struct CorpusArgs {
  std::string path;
  std::string schema = "layout-json";
  std::string categories;
  int max_elements = 0;
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& a, bool required = true) {
  auto* opt = cmd->add_option("--corpus", a.path, "Corpus directory or file");
  if (required) opt->required();
  cmd->add_option("--schema", a.schema, "layout-json | rico | publaynet")
      ->check(CLI::IsMember({"layout-json", "rico", "publaynet"}));
  cmd->add_option("--categories", a.categories, "Category list JSON (rico default: data/rico25_categories.json)");
  cmd->add_option("--max-elements", a.max_elements, "Discard layouts with more elements (M); 0 reads corpus.json")
      ->check(CLI::NonNegativeNumber);
}

Corpus load(const CorpusArgs& a, std::uint64_t seed) {
  LoadOptions opts;
  opts.max_elements = a.max_elements;
  opts.seed = seed;
  if (!a.categories.empty()) {
    opts.categories = load_category_names(a.categories);
  } else if (a.schema == "rico") {
    opts.categories = load_category_names(fs::path(LAYOUTDM_DATA_DIR) / "rico25_categories.json");
  }
  return load_corpus(a.path, a.schema, opts);
}

// ---------------------------------------------------------------- fit-vocab

struct VocabArgs {
  CorpusArgs corpus;
  int bins = 32;
  std::string quantizer = "kmeans";
  std::string out;
  std::string save_corpus_dir;
};

Vocabulary fit_from(const Corpus& corpus, int bins, const std::string& quantizer) {
  std::vector<std::string> warnings;
  auto vocab = fit_vocabulary(corpus.train, corpus.num_categories(), bins, quantizer_kind_from_string(quantizer),
                              &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return vocab;
}

void run_fit_vocab(const VocabArgs& a, const Globals& g) {
  const Corpus corpus = load(a.corpus, g.seed);
  const auto vocab = fit_from(corpus, a.bins, a.quantizer);
  write_text(a.out, vocab.to_json().dump(2) + "\n");
  if (!a.save_corpus_dir.empty()) save_corpus(corpus, a.save_corpus_dir);
  std::cerr << "fitted " << a.quantizer << " vocabulary with B=" << a.bins << " on " << corpus.train.size()
            << " layouts (" << corpus.discarded << " discarded)\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  CorpusArgs corpus;
  std::string vocab;
  int bins = 32;
  std::string quantizer = "kmeans";
  std::string preset = "desk";
  DenoiserConfig net = DenoiserConfig::desk();
  TrainConfig train;
  std::string out;
  std::string log;
  bool quiet = false;
};

void run_train(TrainArgs a, const Globals& g) {
  Corpus corpus = load(a.corpus, g.seed);
  LAYOUTDM_REQUIRE(!corpus.train.empty(), ErrorCode::kEmptyData, "training split is empty");
  const Vocabulary vocab = a.vocab.empty() ? fit_from(corpus, a.bins, a.quantizer) : load_vocabulary(a.vocab);
  LAYOUTDM_REQUIRE(vocab.num_categories() == corpus.num_categories(), ErrorCode::kCategoryMismatch,
                   "vocabulary and corpus disagree on C");
  a.net.max_elements = corpus.max_elements;
  a.net.validate();
  a.train.seed = derive_seed(g.seed, "train");
  const std::array<int, 2> states{vocab.states(Modality::kCategory), vocab.states(Modality::kX)};
  const Schedule schedule = build_schedule(a.net.timesteps, states);
  Denoiser<float> net(a.net, vocab, derive_seed(g.seed, "init"));

  std::string log = "step,loss,vb,aux\n";
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(net, corpus.train, schedule, a.train, [&](const LossRecord& r) {
    log += std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.vb) + "," +
           format_double(r.aux) + "\n";
    if (!a.quiet && (r.step == 1 || r.step % 100 == 0)) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "step " << r.step << " loss " << r.loss << " (" << std::fixed << std::setprecision(1) << s
                << " s)\n" << std::defaultfloat << std::setprecision(6);
    }
  });

  auto ckpt = Checkpoint::from_model(net, schedule);
  ckpt.train_config = a.train.to_json();
  ckpt.metadata = {{"ema_loss", result.ema_loss},
                   {"steps", result.trace.size()},
                   {"corpus", corpus.name},
                   {"categories", corpus.categories},
                   {"seed", g.seed}};
  save_checkpoint(ckpt, a.out);
  if (!a.log.empty()) write_text(a.log, log);
  std::cerr << "trained " << result.trace.size() << " steps, ema loss " << result.ema_loss << ", wrote " << a.out
            << "\n";
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string checkpoint;
  std::string task = "uncond";
  std::string condition;
  bool from_layouts = false;
  int n = 1;
  std::string out;
  std::string svg_dir;
  std::string constraints_out;
  int delta = 1;
  double top_p = 1.0;
  int batch = 64;
  std::string prior = "default";
  double refine_weight = 3.0;
  double margin = 0.2;
  double lambda_pi = 1.0;
  int repeats = 3;
  bool strict = false;
};

PartialElement partial_from_json(const nlohmann::json& j) {
  PartialElement e;
  try {
    if (j.contains("category") && !j.at("category").is_null()) e.category = j.at("category").get<int>();
    if (j.contains("bbox")) {
      const auto& b = j.at("bbox");
      LAYOUTDM_REQUIRE(b.is_array() && b.size() == 4, ErrorCode::kParseError, "bbox must have 4 entries");
      for (int k = 0; k < 4; ++k) {
        if (!b[k].is_null()) e.bbox[k] = b[k].get<double>();
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("condition element: ") + ex.what());
  }
  return e;
}

// Keeps only the fields a task treats as given.
PartialElement project(PartialElement e, TaskKind task) {
  switch (task) {
    case TaskKind::kCategoryToSizePosition:
    case TaskKind::kRelationship:
      e.bbox = {};
      break;
    case TaskKind::kCategorySizeToPosition:
      e.bbox[0].reset();
      e.bbox[1].reset();
      break;
    default:
      break;
  }
  return e;
}

struct PreparedConditions {
  std::vector<TaskCondition> conditions;
  std::vector<std::array<int, 2>> canvas;
  std::vector<std::vector<RelationConstraint>> relations;
};

PreparedConditions prepare_conditions(const SampleArgs& a, const Vocabulary& vocab, int max_elements, Rng& rng) {
  const TaskKind task = task_kind_from_string(a.task);
  ConditionOptions opts;
  opts.refine_kind = prior_kind_from_string(a.prior);
  LAYOUTDM_REQUIRE(opts.refine_kind != PriorKind::kLossGuided, ErrorCode::kInvalidArgument,
                   "--prior must be default, gaussian or negation");
  opts.refine_weight = a.refine_weight;
  opts.refine_margin = a.margin;
  opts.relation_weight = a.lambda_pi;
  opts.relation_repeats = a.repeats;

  PreparedConditions out;
  const auto add = [&](const TaskCondition& c, std::array<int, 2> canvas) {
    std::vector<RelationConstraint> rel;
    for (const auto& p : c.weak_priors) {
      if (p.kind == PriorKind::kLossGuided) rel.insert(rel.end(), p.relations.begin(), p.relations.end());
    }
    for (int k = 0; k < a.n; ++k) {
      out.conditions.push_back(c);
      out.canvas.push_back(canvas);
      out.relations.push_back(rel);
    }
  };

  if (a.condition.empty()) {
    LAYOUTDM_REQUIRE(task == TaskKind::kUnconditional, ErrorCode::kInvalidArgument,
                     "task " + a.task + " needs --condition");
    add(condition_from_partial(task, {}, {}, vocab, max_elements), Layout{}.canvas);
    return out;
  }
  for (const auto& j : read_json_lines(a.condition)) {
    std::array<int, 2> canvas = Layout{}.canvas;
    if (j.contains("canvas")) canvas = layout_from_json(nlohmann::json{{"canvas", j["canvas"]}, {"elements", nlohmann::json::array()}}).canvas;
    if (a.from_layouts) {
      const Layout l = layout_from_json(j);
      add(make_condition(task, l, vocab, max_elements, rng, opts), l.canvas);
      continue;
    }
    LAYOUTDM_REQUIRE(j.contains("elements") && j["elements"].is_array(), ErrorCode::kParseError,
                     "condition line needs an elements array");
    std::vector<PartialElement> elements;
    for (const auto& e : j["elements"]) elements.push_back(project(partial_from_json(e), task));
    std::vector<RelationConstraint> relations;
    if (j.contains("relations")) {
      for (const auto& r : j["relations"]) relations.push_back(relation_from_json(r));
    }
    add(condition_from_partial(task, elements, relations, vocab, max_elements, opts), canvas);
  }
  return out;
}

struct SampleRun {
  std::vector<Layout> layouts;
  std::vector<std::vector<RelationConstraint>> relations;
  SampleStats stats;
};

SampleRun sample_with(const Checkpoint& ckpt, const Denoiser<float>& net, const SampleArgs& a, std::uint64_t seed) {
  const NetworkModel<float> model(net, ckpt.schedule);
  Rng condition_rng(derive_seed(seed, "conditions"));
  auto prepared = prepare_conditions(a, ckpt.vocab, ckpt.config.max_elements, condition_rng);
  SampleOptions opts;
  opts.delta = a.delta;
  opts.top_p = a.top_p;
  opts.batch_size = a.batch;
  opts.partial = a.strict ? PartialPolicy::kError : PartialPolicy::kDrop;
  Rng rng(derive_seed(seed, "sampling"));
  auto result = Sampler(model).sample(prepared.conditions, rng, opts);
  for (std::size_t i = 0; i < result.layouts.size(); ++i) result.layouts[i].canvas = prepared.canvas[i];
  return {std::move(result.layouts), std::move(prepared.relations), result.stats};
}

void write_svgs(const std::vector<Layout>& layouts, const std::string& dir, const std::vector<std::string>& names) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof(file), "layout_%04zu.svg", i);
    write_text((fs::path(dir) / file).string(), render_svg(layouts[i], names));
  }
}

std::vector<std::string> checkpoint_names(const Checkpoint& ckpt) {
  if (ckpt.metadata.contains("categories")) return ckpt.metadata["categories"].get<std::vector<std::string>>();
  return {};
}

void run_sample(const SampleArgs& a, const Globals& g) {
  LAYOUTDM_REQUIRE(a.n >= 1, ErrorCode::kInvalidArgument, "--n must be >= 1");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Denoiser<float> net = ckpt.model();
  const auto run = sample_with(ckpt, net, a, g.seed);
  write_text(a.out, layouts_jsonl(run.layouts));
  if (!a.svg_dir.empty()) write_svgs(run.layouts, a.svg_dir, checkpoint_names(ckpt));
  if (!a.constraints_out.empty()) {
    std::string text;
    for (const auto& rel : run.relations) {
      nlohmann::json line = nlohmann::json::array();
      for (const auto& r : rel) line.push_back(to_json(r));
      text += line.dump() + "\n";
    }
    write_text(a.constraints_out, text);
  }
  std::cerr << "sampled " << run.layouts.size() << " layouts with " << run.stats.network_calls
            << " network calls; dropped " << run.stats.dropped_partial << " partial elements\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string generated;
  std::string reference;
  CorpusArgs corpus;
  std::string split = "test";
  std::string checkpoint;
  std::string constraints;
  bool paired = false;
  int k = 5;
  std::string out;
};

std::vector<std::vector<RelationConstraint>> read_constraints(const std::string& path) {
  std::vector<std::vector<RelationConstraint>> out;
  for (const auto& line : read_json_lines(path)) {
    LAYOUTDM_REQUIRE(line.is_array(), ErrorCode::kParseError, "constraint line must be a JSON array");
    std::vector<RelationConstraint> rel;
    for (const auto& r : line) rel.push_back(relation_from_json(r));
    out.push_back(std::move(rel));
  }
  return out;
}

void run_eval(const EvalArgs& a, const Globals& g) {
  const auto generated = read_layouts(a.generated);
  std::vector<Layout> reference;
  if (!a.reference.empty()) {
    reference = read_layouts(a.reference);
  } else if (!a.corpus.path.empty()) {
    reference = load(a.corpus, g.seed).split(a.split);
  }
  std::optional<Checkpoint> ckpt;
  std::optional<Denoiser<float>> net;
  std::unique_ptr<FeatureExtractor> extractor;
  if (!a.checkpoint.empty()) {
    ckpt = load_checkpoint(a.checkpoint);
    net = ckpt->model();
    extractor = std::make_unique<DenoiserFeatureExtractor>(*net);
  } else {
    int categories = 1, elements = 1;
    for (const std::vector<Layout>* set : {&generated, static_cast<const std::vector<Layout>*>(&reference)}) {
      for (const auto& l : *set) {
        elements = std::max(elements, l.size());
        for (const auto& e : l.elements) categories = std::max(categories, e.category);
      }
    }
    extractor = std::make_unique<LayoutStatsExtractor>(categories, elements);
  }
  std::vector<std::vector<RelationConstraint>> constraints;
  EvalOptions opts;
  opts.k = a.k;
  opts.paired = a.paired;
  opts.extractor = reference.size() > static_cast<std::size_t>(a.k) &&
                           generated.size() > static_cast<std::size_t>(a.k)
                       ? extractor.get()
                       : nullptr;
  if (!a.constraints.empty()) {
    constraints = read_constraints(a.constraints);
    opts.constraints = &constraints;
  }
  auto report = evaluate(generated, reference, opts);
  report.config["generated"] = a.generated;
  if (!a.out.empty()) write_text(a.out, report.to_json().dump(2) + "\n");
  std::cout << report.table();
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string checkpoint;
  CorpusArgs corpus;
  std::string split = "test";
  std::string grid;
  int n = 200;
  int batch = 64;
  double top_p = 1.0;
  int repeats = 3;
  std::string out;
};

void run_sweep(const SweepArgs& a, const Globals& g) {
  const auto eq = a.grid.find('=');
  LAYOUTDM_REQUIRE(eq != std::string::npos, ErrorCode::kInvalidArgument, "--grid must look like name=v1,v2,...");
  const std::string name = a.grid.substr(0, eq);
  LAYOUTDM_REQUIRE(name == "lambda_pi" || name == "delta", ErrorCode::kInvalidArgument,
                   "grid parameter must be lambda_pi or delta");
  std::vector<double> values;
  std::stringstream list(a.grid.substr(eq + 1));
  for (std::string item; std::getline(list, item, ',');) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "bad grid value '" + item + "'");
    }
  }
  LAYOUTDM_REQUIRE(!values.empty(), ErrorCode::kInvalidArgument, "empty grid");

  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Denoiser<float> net = ckpt.model();
  const auto reference_all = load(a.corpus, g.seed).split(a.split);
  LAYOUTDM_REQUIRE(!reference_all.empty(), ErrorCode::kEmptyData, "reference split is empty");
  const DenoiserFeatureExtractor extractor(net);
  const auto reference_features = extractor.extract(reference_all);

  // The relationship sweep conditions on reference layouts with at least two elements.
  std::vector<Layout> sources;
  for (const auto& l : reference_all) {
    if (l.size() >= 2 && static_cast<int>(sources.size()) < a.n) sources.push_back(l);
  }
  const fs::path tmp = fs::temp_directory_path() / ("layoutdm_sweep_" + std::to_string(derive_seed(g.seed, "sweep")));
  if (name == "lambda_pi") {
    write_text(tmp.string(), layouts_jsonl(sources));
  }

  std::string csv = name == "lambda_pi" ? "lambda_pi,fid_surrogate,violation\n"
                                         : "delta,fid_surrogate,seconds,network_calls\n";
  for (double v : values) {
    SampleArgs s;
    s.batch = a.batch;
    s.top_p = a.top_p;
    s.repeats = a.repeats;
    if (name == "lambda_pi") {
      s.task = "relation";
      s.condition = tmp.string();
      s.from_layouts = true;
      s.lambda_pi = v;
    } else {
      s.task = "uncond";
      s.n = a.n;
      s.delta = static_cast<int>(v);
      LAYOUTDM_REQUIRE(s.delta == v && s.delta >= 1, ErrorCode::kInvalidArgument, "delta must be a positive integer");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = sample_with(ckpt, net, s, g.seed);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double fid_value = std::numeric_limits<double>::quiet_NaN();
    if (run.layouts.size() >= 2) fid_value = fid(extractor.extract(run.layouts), reference_features);
    if (name == "lambda_pi") {
      csv += format_double(v) + "," + format_double(fid_value) + "," +
             format_double(violation_rate(run.layouts, run.relations)) + "\n";
    } else {
      csv += std::to_string(s.delta) + "," + format_double(fid_value) + "," + format_double(seconds) + "," +
             std::to_string(run.stats.network_calls) + "\n";
    }
    std::cerr << name << "=" << v << " done in " << seconds << " s\n";
  }
  if (name == "lambda_pi") fs::remove(tmp);
  write_text(a.out, csv);
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string input;
  std::string out_dir;
  std::string names;
};

void run_render(const RenderArgs& a, const Globals&) {
  std::vector<Layout> layouts;
  if (fs::path(a.input).extension() == ".json") {
    try {
      layouts.push_back(layout_from_json(nlohmann::json::parse(read_text(a.input))));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError, a.input + ": " + ex.what());
    }
  } else {
    layouts = read_layouts(a.input);
  }
  std::vector<std::string> names;
  if (!a.names.empty()) names = load_category_names(a.names);
  write_svgs(layouts, a.out_dir, names);
  std::cerr << "rendered " << layouts.size() << " layouts to " << a.out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-diffusion layout generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Root seed for every random stream");
  app.add_option("--config", g.config, "JSON file whose keys stand in for flags not given on the command line");

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic grid-snapped corpus");
  cmd_synth->add_option("--out", synth.out, "Output corpus directory")->required();
  cmd_synth->add_option("--size", synth.spec.size, "Number of layouts")->check(CLI::NonNegativeNumber);
  cmd_synth->add_option("--num-categories", synth.spec.num_categories, "C")->check(CLI::PositiveNumber);
  cmd_synth->add_option("--grid-rows", synth.spec.grid_rows)->check(CLI::PositiveNumber);
  cmd_synth->add_option("--grid-cols", synth.spec.grid_cols)->check(CLI::PositiveNumber);
  cmd_synth->add_option("--jitter", synth.spec.jitter, "Gaussian jitter std on each coordinate");
  cmd_synth->add_option("--min-elements", synth.spec.min_elements);
  cmd_synth->add_option("--max-elements", synth.spec.max_elements);
  cmd_synth->add_option("--category-probs", synth.spec.category_probs, "Comma-separated probabilities")
      ->delimiter(',');

  VocabArgs vocab;
  auto* cmd_vocab = app.add_subcommand("fit-vocab", "Fit the coordinate quantizer and write vocabulary JSON");
  add_corpus_options(cmd_vocab, vocab.corpus);
  cmd_vocab->add_option("--bins", vocab.bins, "B")->check(CLI::Range(2, 4096));
  cmd_vocab->add_option("--quantizer", vocab.quantizer)->check(CLI::IsMember({"kmeans", "uniform", "percentile"}));
  cmd_vocab->add_option("--out", vocab.out, "Vocabulary JSON (stdout if omitted)");
  cmd_vocab->add_option("--save-corpus", vocab.save_corpus_dir, "Also write the ingested corpus here");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a denoiser and write a checkpoint");
  add_corpus_options(cmd_train, tr.corpus);
  cmd_train->add_option("--vocab", tr.vocab, "Vocabulary JSON (fitted on the train split if omitted)");
  cmd_train->add_option("--bins", tr.bins)->check(CLI::Range(2, 4096));
  cmd_train->add_option("--quantizer", tr.quantizer)->check(CLI::IsMember({"kmeans", "uniform", "percentile"}));
  cmd_train->add_option("--preset", tr.preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd_train->add_option("--layers", tr.net.layers)->check(CLI::PositiveNumber);
  cmd_train->add_option("--heads", tr.net.heads)->check(CLI::PositiveNumber);
  cmd_train->add_option("--embed-dim", tr.net.embed_dim)->check(CLI::PositiveNumber);
  cmd_train->add_option("--hidden-dim", tr.net.hidden_dim)->check(CLI::PositiveNumber);
  cmd_train->add_option("--dropout", tr.net.dropout);
  cmd_train->add_option("--timesteps", tr.net.timesteps)->check(CLI::PositiveNumber);
  cmd_train->add_flag("--flat-positions{false}", tr.net.decoupled_pe, "Use one flat positional table");
  cmd_train->add_option("--lr", tr.train.lr);
  cmd_train->add_option("--batch-size", tr.train.batch_size)->check(CLI::PositiveNumber);
  cmd_train->add_option("--epochs", tr.train.epochs)->check(CLI::PositiveNumber);
  cmd_train->add_option("--steps", tr.train.max_steps, "Stop after this many steps (0 = run all epochs)");
  cmd_train->add_option("--lambda", tr.train.lambda, "Auxiliary loss weight");
  cmd_train->add_option("--weight-decay", tr.train.weight_decay);
  cmd_train->add_option("--out", tr.out, "Checkpoint path")->required();
  cmd_train->add_option("--log", tr.log, "Loss CSV (step,loss,vb,aux)");
  cmd_train->add_flag("--quiet", tr.quiet);

  SampleArgs sa;
  auto* cmd_sample = app.add_subcommand("sample", "Sample layouts for one of the six tasks");
  cmd_sample->add_option("--checkpoint", sa.checkpoint)->required();
  cmd_sample->add_option("--task", sa.task, "uncond | c | c+s | completion | refine | relation")
      ->check(CLI::IsMember({"uncond", "c", "c+s", "completion", "refine", "relation"}));
  cmd_sample->add_option("--condition", sa.condition, "JSONL of conditions (partial elements or layouts)");
  cmd_sample->add_flag("--from-layouts", sa.from_layouts, "Derive each condition from a complete layout");
  cmd_sample->add_option("--n", sa.n, "Samples per condition")->check(CLI::PositiveNumber);
  cmd_sample->add_option("--out", sa.out, "Output JSONL (stdout if omitted)");
  cmd_sample->add_option("--svg-dir", sa.svg_dir, "Also render every sample here");
  cmd_sample->add_option("--constraints-out", sa.constraints_out, "Write the relation constraints per sample");
  cmd_sample->add_option("--delta", sa.delta, "Timestep skip")->check(CLI::PositiveNumber);
  cmd_sample->add_option("--top-p", sa.top_p, "Nucleus mass")->check(CLI::Range(0.0, 1.0));
  cmd_sample->add_option("--batch-size", sa.batch)->check(CLI::PositiveNumber);
  cmd_sample->add_option("--prior", sa.prior, "Refinement prior")->check(CLI::IsMember({"default", "gaussian", "negation"}));
  cmd_sample->add_option("--refine-weight", sa.refine_weight, "Refinement prior weight");
  cmd_sample->add_option("--margin", sa.margin, "Refinement window");
  cmd_sample->add_option("--lambda-pi", sa.lambda_pi, "Relation guidance weight");
  cmd_sample->add_option("--repeats", sa.repeats, "Guidance repeats per step")->check(CLI::PositiveNumber);
  cmd_sample->add_flag("--strict", sa.strict, "Fail instead of dropping partially predicted elements");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Compute metrics for generated layouts");
  cmd_eval->add_option("--generated", ev.generated, "Generated layouts JSONL")->required();
  cmd_eval->add_option("--reference", ev.reference, "Reference layouts JSONL");
  add_corpus_options(cmd_eval, ev.corpus, false);
  cmd_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "Enables FID, density and coverage");
  cmd_eval->add_option("--constraints", ev.constraints, "Constraint JSONL from sample --constraints-out");
  cmd_eval->add_flag("--paired", ev.paired, "Line i of both files describe the same layout (DocSim)");
  cmd_eval->add_option("--k", ev.k, "Neighbourhood size for density/coverage")->check(CLI::PositiveNumber);
  cmd_eval->add_option("--out", ev.out, "Report JSON");

  SweepArgs sw;
  auto* cmd_sweep = app.add_subcommand("sweep", "Sample over a lambda_pi or delta grid and write a trade-off CSV");
  cmd_sweep->add_option("--checkpoint", sw.checkpoint)->required();
  add_corpus_options(cmd_sweep, sw.corpus);
  cmd_sweep->add_option("--split", sw.split)->check(CLI::IsMember({"train", "val", "test"}));
  cmd_sweep->add_option("--grid", sw.grid, "lambda_pi=0,1,2 or delta=1,2,4")->required();
  cmd_sweep->add_option("--n", sw.n, "Samples per grid point")->check(CLI::PositiveNumber);
  cmd_sweep->add_option("--batch-size", sw.batch)->check(CLI::PositiveNumber);
  cmd_sweep->add_option("--top-p", sw.top_p)->check(CLI::Range(0.0, 1.0));
  cmd_sweep->add_option("--repeats", sw.repeats)->check(CLI::PositiveNumber);
  cmd_sweep->add_option("--out", sw.out, "CSV path (stdout if omitted)");

  RenderArgs rd;
  auto* cmd_render = app.add_subcommand("render", "Render layouts to SVG");
  cmd_render->add_option("--input", rd.input, "Layouts JSONL or a single layout .json")->required();
  cmd_render->add_option("--out-dir", rd.out_dir)->required();
  cmd_render->add_option("--names", rd.names, "Category list JSON for the legend");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (tr.preset == "paper") {
      const DenoiserConfig paper;
      if (cmd_train->count("--layers") == 0) tr.net.layers = paper.layers;
      if (cmd_train->count("--embed-dim") == 0) tr.net.embed_dim = paper.embed_dim;
      if (cmd_train->count("--hidden-dim") == 0) tr.net.hidden_dim = paper.hidden_dim;
    }
    if (*cmd_synth) run_synth(synth, g);
    if (*cmd_vocab) run_fit_vocab(vocab, g);
    if (*cmd_train) run_train(tr, g);
    if (*cmd_sample) run_sample(sa, g);
    if (*cmd_eval) run_eval(ev, g);
    if (*cmd_sweep) run_sweep(sw, g);
    if (*cmd_render) run_render(rd, g);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(e.code()));
  } catch (const std::exception& e) {
    std::cerr << "error: IO_ERROR: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
