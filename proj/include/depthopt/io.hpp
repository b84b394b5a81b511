#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "depthopt/camera.hpp"
#include "depthopt/image.hpp"

namespace depthopt {

/// All readers throw std::runtime_error with the path and, for binary
/// formats, the byte offset of the first problem. All writers are atomic
/// (write to a temp file, then rename).

// --- Portable Float Map (PFM) ---------------------------------------------
// "Pf" one channel / "PF" three channels, dims line, scale line whose sign
// encodes endianness (negative = little-endian), rows bottom-to-top, 32-bit
// floats. NaN stores an invalid pixel.

void write_pfm(const std::filesystem::path& path, const Grid<double>& values,
               const Grid<std::uint8_t>* valid = nullptr);

struct PfmScalar {
  Grid<double> values;
  Grid<std::uint8_t> valid;  // finite pixels
};

PfmScalar read_pfm(const std::filesystem::path& path);

void write_depth_pfm(const std::filesystem::path& path, const DepthField& depth);
// Non-finite and non-positive samples load as invalid.
DepthField read_depth_pfm(const std::filesystem::path& path);

// 3-channel variant used for normal maps (planes interleaved per pixel).
void write_pfm3(const std::filesystem::path& path, const Grid<double>& c0,
                const Grid<double>& c1, const Grid<double>& c2,
                const Grid<std::uint8_t>* valid = nullptr);

struct PfmPlanes {
  std::array<Grid<double>, 3> channels;
  Grid<std::uint8_t> valid;  // all three samples finite
};

PfmPlanes read_pfm3(const std::filesystem::path& path);

// --- Middlebury .flo --------------------------------------------------------
// float magic 202021.25, int32 width, int32 height, interleaved (u,v) float32
// row-major, little-endian throughout.

void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// --- PNM --------------------------------------------------------------------
// Images: binary PPM, P6 maxval 255, values mapped to [0,1] by /255.
// Instance masks: binary PGM, P5 maxval 65535, big-endian 16-bit ids.

void write_ppm(const std::filesystem::path& path, const ImageRGB& image);
ImageRGB read_ppm(const std::filesystem::path& path);

void write_pgm16(const std::filesystem::path& path, const InstanceMask& mask);
InstanceMask read_pgm16(const std::filesystem::path& path);

// --- Text formats -----------------------------------------------------------

// One line per frame: frame_id then the 16 row-major entries of the 4x4
// camera-to-world matrix at full precision. Rotations with orthogonality
// error beyond 1e-6 are rejected with the row index, accepted ones are
// projected to the nearest rotation.
void write_poses(const std::filesystem::path& path,
                 const std::vector<std::pair<int, PoseSE3>>& poses);
std::vector<std::pair<int, PoseSE3>> read_poses(const std::filesystem::path& path);

// "fx fy cx cy width height"
void write_intrinsics(const std::filesystem::path& path, const Intrinsics& K);
Intrinsics read_intrinsics(const std::filesystem::path& path);

// Lines "u v depth_m" with integer pixel coordinates; dimensions come from
// the caller.
void write_sparse(const std::filesystem::path& path, const SparseDepth& sparse);
SparseDepth read_sparse(const std::filesystem::path& path, int width, int height);

// --- key=value configuration -------------------------------------------------

/// Pipeline configuration as flat key=value lines; '#' starts a comment.
/// Unknown keys are rejected. Every key has a default; flags override file
/// values.
struct PipelineConfig {
  std::string frames_dir;
  std::string out_dir;
  int steps = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double lambda_depth = 0.001;
  double lambda_photometric = 1.0;
  double lambda_smoothness = 0.3;
  double lambda_flow_shape = 0.1;
  double lambda_normal_scale = 0.001;
  double sample_ratio = 0.3;
  double ground_threshold_deg = 15.0;
  int patch_size = 20;
  std::uint64_t seed = 0;
  bool detach_median = false;
  bool optimize_neighbors = false;
  std::string init_mode = "sparse";  // sparse | gt-lognormal
  double init_sigma = 0.3;
  bool median_scaling = false;
  double min_depth = 0.0;  // 0 disables the clamp
  double max_depth = 0.0;

  void set(const std::string& key, const std::string& value);  // throws on unknown key
};

PipelineConfig read_config(const std::filesystem::path& path);

// --- frame-set layout ---------------------------------------------------------

/// File names used by the CLI inside a frames directory.
std::string frame_image_name(int frame);
std::string frame_depth_gt_name(int frame);
std::string frame_mask_name(int frame);
std::string frame_flow_name(int frame, int neighbor);
std::string frame_sparse_name(int frame);
std::string frame_depth_est_name(int frame);
std::string frame_trace_name(int frame);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace depthopt
