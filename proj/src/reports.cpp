#include "latent_steer/reports.hpp"

#include "latent_steer/config_json.hpp"
#include "latent_steer/io_util.hpp"
#include "latent_steer/scene.hpp"

namespace latent_steer {

using nlohmann::json;

json reproducibility_stanza(const std::string& command, const std::vector<std::string>& argv, const json& seeds,
                            const json& config, const std::vector<InputFile>& inputs) {
  json in = json::object();
  for (const auto& f : inputs) in[f.role] = {{"path", f.path.generic_string()}, {"sha256", f.sha256}};
  return {{"tool", "latent-steer"},
          {"report_version", kReportVersion},
          {"command", command},
          {"argv", argv},
          {"seeds", seeds},
          {"config", config},
          {"inputs", in}};
}

json eval_json(const EvalStats& stats, bool with_sequences) {
  json j{{"per_step", stats.per_step}, {"per_sequence", stats.per_sequence}, {"sequence_count", stats.sequences.size()}};
  if (with_sequences) {
    json seqs = json::array();
    for (const auto& s : stats.sequences) seqs.push_back({{"range", s.range}, {"mse", s.mse}});
    j["sequences"] = seqs;
  }
  return j;
}

json crossval_json(const CrossValidation& cv) {
  json folds = json::array();
  for (const auto& f : cv.folds) {
    folds.push_back({{"fold", f.fold}, {"test", f.test}, {"train_error", f.train_error}, {"test_error", f.test_error}});
  }
  return {{"folds", folds}, {"train_error", cv.train_error}, {"test_error", cv.test_error}};
}

json impact_record_json(const ImpactRecord& r) {
  return {{"dim", r.dim},         {"y0", r.y0},         {"y_plus", r.y_plus}, {"y_minus", r.y_minus},
          {"d_minus", r.d_minus}, {"d_plus", r.d_plus}, {"d_per", r.d_per},   {"impact", r.impact}};
}

json alp_dimension_json(const AlpDimensionResult& r, const ImpactRecord& impact) {
  json counts = json::object();
  for (int c = 0; c < kNumSceneClasses; ++c) counts[scene_class_name(c)] = 0;
  for (const auto& [cls, n] : r.class_counts) {
    counts[cls < kNumSceneClasses ? std::string(scene_class_name(cls)) : "class_" + std::to_string(cls)] = n;
  }
  std::size_t masked = 0;
  for (auto v : r.mask.data) masked += v != 0;
  return {{"dim", r.dim},
          {"region_count", r.region_count},
          {"class_counts", counts},
          {"masked_pixels", masked},
          {"cutoff", r.cutoff},
          {"degenerate", r.degenerate},
          {"impact", impact_record_json(impact)}};
}

json aggregate_json(const ImpactAggregate& agg) {
  json dims = json::array();
  for (const auto& d : agg.dims) {
    dims.push_back({{"dim", d.dim},
                    {"minus_error", d.minus_error},
                    {"plus_error", d.plus_error},
                    {"top_impact", d.top_impact},
                    {"bottom_impact", d.bottom_impact}});
  }
  json top = json::array(), bottom = json::array();
  for (auto p : agg.top_frames) top.push_back(agg.frames[p]);
  for (auto p : agg.bottom_frames) bottom.push_back(agg.frames[p]);
  return {{"sample_size", agg.frames.size()},
          {"frames", agg.frames},
          {"sample_error", agg.sample_error},
          {"sample_error_summary", agg.sample_error_summary},
          {"top_frames", top},
          {"bottom_frames", bottom},
          {"dims", dims}};
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace latent_steer
