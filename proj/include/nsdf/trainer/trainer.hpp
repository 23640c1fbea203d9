#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nsdf/field/radiance_field.hpp"
#include "nsdf/field/sdf_field.hpp"
#include "nsdf/losses/losses.hpp"
#include "nsdf/render/camera.hpp"
#include "nsdf/render/image.hpp"
#include "nsdf/render/render.hpp"
#include "nsdf/sds/guidance.hpp"
#include "nsdf/sds/sds.hpp"
#include "nsdf/trainer/adam.hpp"
#include "nsdf/trainer/config.hpp"

namespace nsdf::trainer {

struct VisibleView {
  render::Camera camera;
  render::Image image;  // RGB in [0, 1]
  render::Image mask;   // one channel in [0, 1]
};

struct ViewSet {
  std::vector<VisibleView> visible;
  std::vector<render::Camera> unobserved;

  [[nodiscard]] std::size_t size() const { return visible.size() + unobserved.size(); }
  void validate() const;
};

enum class ViewKind { kVisible, kUnobserved };

struct Viewpoint {
  std::size_t index = 0;  // within its own list
  ViewKind kind = ViewKind::kVisible;
};

/// Uniform draw over the concatenation visible ++ unobserved.
Viewpoint pick_viewpoint(std::mt19937_64& rng, const ViewSet& views);

/// Guidance mode for the k-th unobserved step under strict alternation.
sds::SdsMode sds_mode_scheduler(long k, bool use_normals, bool use_multiview);
/// Same, but the single/multi choice on non-color steps is a fair coin from `rng` when alternation is random.
sds::SdsMode sds_mode_scheduler(long k, bool use_normals, bool use_multiview, Alternation alternation,
                                std::mt19937_64& rng);

/// FIFO of the last three visible-iteration normal maps. Entries keep a copy of the SDF parameters
/// they were rendered from; the map itself is produced on first use, which yields the same values as
/// rendering it eagerly.
class NormalBuffer {
 public:
  static constexpr std::size_t kCapacity = 3;

  struct Entry {
    std::size_t view = 0;
    double s = 0.0;
    VecX sdf_params;
    std::optional<MatX> normals;  // pixels x 3, filled on demand
  };

  void push(Entry entry);
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const std::deque<Entry>& entries() const { return entries_; }
  std::deque<Entry>& entries() { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::deque<Entry> entries_;
};

struct StepRecord {
  long iteration = 0;
  ViewKind kind = ViewKind::kVisible;
  std::size_t view = 0;
  std::optional<sds::SdsMode> mode;
  losses::LossValues values;
  double learning_rate = 0.0;
  bool non_finite = false;     // step dropped
  bool oracle_skipped = false;  // guidance unavailable this step
};

class Trainer {
 public:
  /// `oracle` may be null when the config disables guidance. It must outlive the trainer.
  Trainer(TrainConfig config, ViewSet views, sds::GuidanceOracle* oracle);

  /// Picks a viewpoint and runs one iteration.
  StepRecord step();
  /// Runs one iteration on a given viewpoint.
  StepRecord training_step(const Viewpoint& vp);

  [[nodiscard]] long iteration() const { return iteration_; }
  [[nodiscard]] long sds_iteration() const { return sds_iteration_; }
  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] const ViewSet& views() const { return views_; }
  [[nodiscard]] const field::SdfField& sdf() const { return sdf_; }
  [[nodiscard]] const field::RadianceField& radiance() const { return radiance_; }
  [[nodiscard]] double s_value() const;
  [[nodiscard]] const NormalBuffer& normal_buffer() const { return buffer_; }
  [[nodiscard]] int nan_streak() const { return nan_streak_; }
  [[nodiscard]] long nan_total() const { return nan_total_; }
  /// Buffer maps as images (renders pending entries).
  std::vector<render::Image> buffer_images();

  [[nodiscard]] render::SamplingSpec sampling() const;

  /// Complete state: config, fields, sharpness, optimizer, RNG streams, counters and buffer.
  void write_checkpoint(std::ostream& os) const;
  [[nodiscard]] std::string checkpoint_bytes() const;
  void save(const std::filesystem::path& path) const;
  /// Restores a state written by write_checkpoint. The view set must match the one used for training.
  static Trainer resume(std::istream& is, ViewSet views, sds::GuidanceOracle* oracle);
  static Trainer resume(const std::filesystem::path& path, ViewSet views, sds::GuidanceOracle* oracle);

 private:
  StepRecord visible_step(std::size_t index, StepRecord rec);
  StepRecord unobserved_step(std::size_t index, StepRecord rec);
  bool apply_update(const VecX& g_sdf, const VecX& g_rad, const VecX& g_u, StepRecord& rec);
  MatX render_buffer_map(const NormalBuffer::Entry& e) const;

  TrainConfig config_;
  ViewSet views_;
  sds::GuidanceOracle* oracle_;
  field::SdfField sdf_;
  field::RadianceField radiance_;
  VecX u_;  // 1 entry, s = exp(10 u)
  AdamState adam_;
  std::mt19937_64 rng_;      // views, pixels, jitter
  std::mt19937_64 sds_rng_;  // guidance draws only
  NormalBuffer buffer_;
  long iteration_ = 0;
  long sds_iteration_ = 0;
  int nan_streak_ = 0;
  long nan_total_ = 0;
};

/// Summary of a fit call.
struct FitResult {
  std::vector<StepRecord> records;
  std::filesystem::path final_checkpoint;
  double seconds = 0.0;
};

/// Runs the loop to config.iterations, writing `loss.csv`, `config.txt`, periodic `ckpt_<iter>.bin`
/// and `final.bin` into `out_dir`. With `resume_from`, continues that run.
FitResult fit(const TrainConfig& config, const ViewSet& views, sds::GuidanceOracle* oracle,
              const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume_from = {});

/// NSDF_GUIDANCE_URL selects a remote oracle (schedule verified); otherwise the in-process toy oracle.
std::unique_ptr<sds::GuidanceOracle> make_oracle(const TrainConfig& config);

/// Reads only the fields out of a training checkpoint.
struct TrainedFields {
  TrainConfig config;
  field::SdfField sdf;
  field::RadianceField radiance;
  double s = 0.0;
};
TrainedFields load_trained_fields(const std::filesystem::path& path);

std::string to_string(ViewKind kind);

}  // namespace nsdf::trainer
