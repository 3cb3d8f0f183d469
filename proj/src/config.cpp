#include "bg/config.hpp"

#include <fstream>
#include <set>

namespace bg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError(ctx + ": unknown key '" + key + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

DegradationParams degradation_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"beta", "depth", "ambient", "blur_sigma", "noise_sigma",
                 "contrast"},
             ctx);
  DegradationParams p;
  get_if(j, "beta", p.beta);
  get_if(j, "depth", p.depth);
  get_if(j, "ambient", p.ambient);
  get_if(j, "blur_sigma", p.blur_sigma);
  get_if(j, "noise_sigma", p.noise_sigma);
  get_if(j, "contrast", p.contrast);
  return p;
}

json degradation_to_json(const DegradationParams& p) {
  return json{{"beta", p.beta},       {"depth", p.depth},
              {"ambient", p.ambient}, {"blur_sigma", p.blur_sigma},
              {"noise_sigma", p.noise_sigma}, {"contrast", p.contrast}};
}

StagePlan stage_plan_from_json(const json& j, Stage stage,
                               const StagePlan& defaults) {
  check_keys(j, {"epochs", "batch_size", "optimizer", "lr", "lrf", "momentum",
                 "weight_decay"},
             std::string("stages.") + stage_letter(stage));
  StagePlan p = defaults;
  p.stage = stage;
  get_if(j, "epochs", p.epochs);
  get_if(j, "batch_size", p.batch_size);
  get_if(j, "optimizer", p.optimizer);
  get_if(j, "lr", p.lr);
  get_if(j, "lrf", p.lrf);
  get_if(j, "momentum", p.momentum);
  get_if(j, "weight_decay", p.weight_decay);
  return p;
}

json stage_plan_to_json(const StagePlan& p) {
  return json{{"epochs", p.epochs},
              {"batch_size", p.batch_size},
              {"optimizer", p.optimizer},
              {"lr", p.lr},
              {"lrf", p.lrf},
              {"momentum", p.momentum},
              {"weight_decay", p.weight_decay}};
}

}  // namespace

char stage_letter(Stage s) {
  switch (s) {
    case Stage::A_enhancer: return 'A';
    case Stage::B_dsn_pretrain: return 'B';
    case Stage::C_joint_enh_branch: return 'C';
    default: return 'D';
  }
}

Stage stage_from_letter(char c) {
  switch (c) {
    case 'A': return Stage::A_enhancer;
    case 'B': return Stage::B_dsn_pretrain;
    case 'C': return Stage::C_joint_enh_branch;
    case 'D': return Stage::D_guided_detection;
    default: throw ConfigError(std::string("unknown stage '") + c + "'");
  }
}

void StagePlan::validate() const {
  if (epochs < 0) throw ConfigError("stage plan: epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("stage plan: batch_size must be > 0");
  if (!(lr > 0)) throw ConfigError("stage plan: lr must be > 0");
  if (lrf <= 0 || lrf > 1.0)
    throw ConfigError("stage plan: lrf must lie in (0,1]");
  if (optimizer != "adam" && optimizer != "sgd")
    throw ConfigError("stage plan: optimizer must be 'adam' or 'sgd'");
}

InferenceMode mode_from_string(const std::string& s) {
  if (s == "detect_only") return InferenceMode::detect_only;
  if (s == "separate") return InferenceMode::separate;
  if (s == "cascaded") return InferenceMode::cascaded;
  throw ConfigError("unknown inference mode '" + s + "'");
}

const char* mode_name(InferenceMode m) {
  switch (m) {
    case InferenceMode::detect_only: return "detect_only";
    case InferenceMode::separate: return "separate";
    default: return "cascaded";
  }
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.dataset.n_train = 500;
  c.dataset.n_test = 100;
  c.dataset.image_h = 64;
  c.dataset.image_w = 64;
  c.degradation_clear = c.degradation.mild();
  c.detector.num_classes = static_cast<int>(c.dataset.classes.size());

  StagePlan a;
  a.stage = Stage::A_enhancer;
  a.epochs = 4;
  a.batch_size = 2;
  a.optimizer = "adam";
  a.lr = 1e-4;
  a.lrf = 1.0;
  a.momentum = 0.5;
  a.weight_decay = 0.0;
  StagePlan b;
  b.stage = Stage::B_dsn_pretrain;
  b.epochs = 16;
  b.batch_size = 16;
  b.optimizer = "sgd";
  b.lr = 1e-2;
  b.lrf = 1e-2;
  b.momentum = 0.937;
  b.weight_decay = 5e-4;
  StagePlan cc = b;
  cc.stage = Stage::C_joint_enh_branch;
  cc.epochs = 10;
  cc.lr = 1e-3;
  cc.lrf = 1e-3;
  StagePlan d = b;
  d.stage = Stage::D_guided_detection;
  d.epochs = 20;
  c.stages = {{'A', a}, {'B', b}, {'C', cc}, {'D', d}};
  return c;
}

std::map<char, StagePlan> RunConfig::reference_stage_plans() {
  auto plans = desk_default().stages;
  plans['A'].epochs = 50;
  plans['A'].batch_size = 2;
  plans['A'].lr = 1e-4;
  plans['A'].momentum = 0.5;
  plans['B'].epochs = 300;
  plans['B'].batch_size = 16;
  plans['B'].lr = 1e-2;
  plans['B'].lrf = 1e-2;
  plans['B'].momentum = 0.937;
  plans['B'].weight_decay = 5e-4;
  plans['C'] = plans['B'];
  plans['C'].stage = Stage::C_joint_enh_branch;
  plans['C'].lr = 1e-3;
  plans['C'].lrf = 1e-3;
  plans['D'] = plans['B'];
  plans['D'].stage = Stage::D_guided_detection;
  return plans;
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j,
             {"seed", "run_id", "output_dir", "dataset", "degradation",
              "degradation_clear", "model", "loss", "stages", "eval"},
             "config");
  RunConfig c = desk_default();
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.seed_explicit = true;
  }
  get_if(j, "run_id", c.run_id);
  get_if(j, "output_dir", c.output_dir);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"root", "n_train", "n_test", "image_size", "classes",
                "objects_per_image"},
               "dataset");
    get_if(d, "root", c.dataset_root);
    get_if(d, "n_train", c.dataset.n_train);
    get_if(d, "n_test", c.dataset.n_test);
    if (d.contains("image_size")) {
      const auto sz = d.at("image_size").get<std::vector<int>>();
      if (sz.size() != 2) throw ConfigError("dataset.image_size: need [h,w]");
      c.dataset.image_h = sz[0];
      c.dataset.image_w = sz[1];
    }
    get_if(d, "classes", c.dataset.classes);
    if (d.contains("objects_per_image")) {
      const auto r = d.at("objects_per_image").get<std::vector<int>>();
      if (r.size() != 2)
        throw ConfigError("dataset.objects_per_image: need [min,max]");
      c.dataset.objects_min = r[0];
      c.dataset.objects_max = r[1];
    }
  }
  bool clear_given = false;
  if (j.contains("degradation"))
    c.degradation = degradation_from_json(j.at("degradation"), "degradation");
  if (j.contains("degradation_clear")) {
    c.degradation_clear =
        degradation_from_json(j.at("degradation_clear"), "degradation_clear");
    clear_given = true;
  }
  if (!clear_given) c.degradation_clear = c.degradation.mild();

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"generator_channels", "generator_res_blocks",
                "detector_widths", "neck_channels", "width_multiplier",
                "anchors"},
               "model");
    get_if(m, "generator_channels", c.generator_channels);
    get_if(m, "generator_res_blocks", c.generator_res_blocks);
    get_if(m, "detector_widths", c.detector.widths);
    get_if(m, "neck_channels", c.detector.neck_channels);
    get_if(m, "width_multiplier", c.detector.width_multiplier);
    get_if(m, "anchors", c.detector.anchors);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l,
               {"lambda1", "lambda2", "a", "b", "c", "use_ciou", "mu",
                "guided_levels", "literal_consistency_norm", "eta1", "eta2",
                "adv_form"},
               "loss");
    get_if(l, "lambda1", c.enhancer_weights.lambda1);
    get_if(l, "lambda2", c.enhancer_weights.lambda2);
    get_if(l, "a", c.detection_weights.a);
    get_if(l, "b", c.detection_weights.b);
    get_if(l, "c", c.detection_weights.c);
    get_if(l, "use_ciou", c.detection_weights.use_ciou);
    if (l.contains("mu")) {
      const auto mu = l.at("mu").get<std::vector<double>>();
      if (mu.size() != 3) throw ConfigError("loss.mu: need [mu1,mu2,mu3]");
      c.guidance_weights.mu1 = mu[0];
      c.guidance_weights.mu2 = mu[1];
      c.guidance_weights.mu3 = mu[2];
    }
    if (l.contains("guided_levels")) {
      const auto lv = l.at("guided_levels").get<std::vector<int>>();
      c.guidance_weights.enabled_levels =
          std::set<int>(lv.begin(), lv.end());
    }
    get_if(l, "literal_consistency_norm",
           c.guidance_weights.literal_spatial_norm);
    get_if(l, "eta1", c.total_weights.eta1);
    get_if(l, "eta2", c.total_weights.eta2);
    get_if(l, "adv_form", c.adv_form);
  }

  if (j.contains("stages")) {
    const json& s = j.at("stages");
    check_keys(s, {"A", "B", "C", "D"}, "stages");
    for (char letter : {'A', 'B', 'C', 'D'}) {
      const std::string key(1, letter);
      if (s.contains(key))
        c.stages[letter] = stage_plan_from_json(
            s.at(key), stage_from_letter(letter), c.stages.at(letter));
    }
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"conf_thresh", "nms_iou", "fps_warmup", "fps_iters"},
               "eval");
    get_if(e, "conf_thresh", c.eval_conf_thresh);
    get_if(e, "nms_iou", c.nms_iou_thresh);
    get_if(e, "fps_warmup", c.fps_warmup);
    get_if(e, "fps_iters", c.fps_iters);
  }

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json stages_j;
  for (const auto& [letter, plan] : stages)
    stages_j[std::string(1, letter)] = stage_plan_to_json(plan);
  std::vector<int> levels(guidance_weights.enabled_levels.begin(),
                          guidance_weights.enabled_levels.end());
  return json{
      {"seed", seed},
      {"run_id", run_id},
      {"output_dir", output_dir},
      {"dataset",
       {{"root", dataset_root},
        {"n_train", dataset.n_train},
        {"n_test", dataset.n_test},
        {"image_size", {dataset.image_h, dataset.image_w}},
        {"classes", dataset.classes},
        {"objects_per_image", {dataset.objects_min, dataset.objects_max}}}},
      {"degradation", degradation_to_json(degradation)},
      {"degradation_clear", degradation_to_json(degradation_clear)},
      {"model",
       {{"generator_channels", generator_channels},
        {"generator_res_blocks", generator_res_blocks},
        {"detector_widths", detector.widths},
        {"neck_channels", detector.neck_channels},
        {"width_multiplier", detector.width_multiplier},
        {"anchors", detector.anchors}}},
      {"loss",
       {{"lambda1", enhancer_weights.lambda1},
        {"lambda2", enhancer_weights.lambda2},
        {"a", detection_weights.a},
        {"b", detection_weights.b},
        {"c", detection_weights.c},
        {"use_ciou", detection_weights.use_ciou},
        {"mu",
         {guidance_weights.mu1, guidance_weights.mu2, guidance_weights.mu3}},
        {"guided_levels", levels},
        {"literal_consistency_norm", guidance_weights.literal_spatial_norm},
        {"eta1", total_weights.eta1},
        {"eta2", total_weights.eta2},
        {"adv_form", adv_form}}},
      {"stages", stages_j},
      {"eval",
       {{"conf_thresh", eval_conf_thresh},
        {"nms_iou", nms_iou_thresh},
        {"fps_warmup", fps_warmup},
        {"fps_iters", fps_iters}}},
  };
}

void RunConfig::validate() {
  dataset.validate();
  degradation.validate();
  degradation_clear.validate();
  for (const auto& [letter, plan] : stages) plan.validate();
  if (adv_form != "log" && adv_form != "lsq")
    throw ConfigError("loss.adv_form must be 'log' or 'lsq'");
  if (generator_channels < 2 || generator_res_blocks < 1)
    throw ConfigError("model: generator too small");
  for (int l : guidance_weights.enabled_levels)
    if (l < 1 || l > 3)
      throw ConfigError("loss.guided_levels entries must lie in 1..3");
  // The detector head always follows the dataset class list.
  detector.num_classes = static_cast<int>(dataset.classes.size());
  if (eval_conf_thresh < 0 || eval_conf_thresh > 1 || nms_iou_thresh < 0 ||
      nms_iou_thresh > 1)
    throw ConfigError("eval thresholds must lie in [0,1]");
  if (fps_warmup < 0 || fps_iters <= 0)
    throw ConfigError("eval fps settings invalid");
}

}  // namespace bg
