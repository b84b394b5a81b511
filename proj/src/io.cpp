#include "depthopt/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace depthopt {

namespace {

namespace fs = std::filesystem;

[[noreturn]] void fail(const fs::path& path, const std::string& what,
                       std::int64_t offset = -1) {
  std::ostringstream os;
  os << path.string() << ": " << what;
  if (offset >= 0) os << " (byte offset " << offset << ")";
  throw std::runtime_error(os.str());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(tmp, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(tmp, "write failed");
  }
  fs::rename(tmp, path);
}

void put_f32_le(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32(const std::string& bytes, std::size_t offset, bool little_endian) {
  std::uint32_t bits = 0;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  if (little_endian) {
    bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
  } else {
    bits = std::uint32_t(p[3]) | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 |
           std::uint32_t(p[0]) << 24;
  }
  return std::bit_cast<float>(bits);
}

void put_i32_le(std::string& out, std::int32_t v) {
  put_f32_le(out, std::bit_cast<float>(static_cast<std::uint32_t>(v)));
}

std::int32_t get_i32_le(const std::string& bytes, std::size_t offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return static_cast<std::int32_t>(std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                   std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24);
}

/// Reads one whitespace-terminated token starting at *pos, skipping leading
/// whitespace and '#' comments.
std::string next_token(const std::string& bytes, std::size_t* pos, const fs::path& path) {
  std::size_t i = *pos;
  while (i < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[i]))) {
      ++i;
    } else if (bytes[i] == '#') {
      while (i < bytes.size() && bytes[i] != '\n') ++i;
    } else {
      break;
    }
  }
  if (i >= bytes.size()) fail(path, "unexpected end of header", static_cast<std::int64_t>(i));
  const std::size_t start = i;
  while (i < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[i]))) ++i;
  *pos = i;
  return bytes.substr(start, i - start);
}

int parse_int(const std::string& token, const fs::path& path, std::size_t offset) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(path, "malformed integer '" + token + "'", static_cast<std::int64_t>(offset));
  }
}

double parse_double(const std::string& token, const fs::path& path, std::size_t offset) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(path, "malformed number '" + token + "'", static_cast<std::int64_t>(offset));
  }
}

std::string format_full(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct PfmData {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> samples;  // row-major, top-to-bottom, interleaved
};

void write_pfm_impl(const fs::path& path, const PfmData& data) {
  std::string out;
  out += data.channels == 3 ? "PF\n" : "Pf\n";
  out += std::to_string(data.width) + " " + std::to_string(data.height) + "\n";
  out += "-1.0\n";
  for (int y = data.height - 1; y >= 0; --y) {  // bottom row first
    for (int x = 0; x < data.width * data.channels; ++x) {
      put_f32_le(out, data.samples[static_cast<std::size_t>(y) * data.width * data.channels + x]);
    }
  }
  write_file_atomic(path, out);
}

PfmData read_pfm_impl(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, &pos, path);
  PfmData data;
  if (magic == "Pf") {
    data.channels = 1;
  } else if (magic == "PF") {
    data.channels = 3;
  } else {
    fail(path, "bad magic '" + magic + "', expected Pf or PF", 0);
  }
  data.width = parse_int(next_token(bytes, &pos, path), path, pos);
  data.height = parse_int(next_token(bytes, &pos, path), path, pos);
  if (data.width <= 0 || data.height <= 0) fail(path, "non-positive dimensions", pos);
  const double scale = parse_double(next_token(bytes, &pos, path), path, pos);
  if (scale == 0.0) fail(path, "zero scale", pos);
  if (pos >= bytes.size()) fail(path, "truncated after header", pos);
  ++pos;  // single whitespace after the scale line
  const bool little_endian = scale < 0.0;
  const std::size_t count =
      static_cast<std::size_t>(data.width) * data.height * data.channels;
  if (bytes.size() - pos < count * 4) {
    fail(path, "truncated payload", static_cast<std::int64_t>(bytes.size()));
  }
  data.samples.resize(count);
  for (int y = 0; y < data.height; ++y) {
    const int src_row = data.height - 1 - y;  // stored bottom-to-top
    for (int x = 0; x < data.width * data.channels; ++x) {
      data.samples[static_cast<std::size_t>(y) * data.width * data.channels + x] = get_f32(
          bytes, pos + (static_cast<std::size_t>(src_row) * data.width * data.channels + x) * 4,
          little_endian);
    }
  }
  return data;
}

}  // namespace

void write_pfm(const fs::path& path, const Grid<double>& values,
               const Grid<std::uint8_t>* valid) {
  PfmData data;
  data.width = values.width();
  data.height = values.height();
  data.channels = 1;
  data.samples.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const bool ok = !valid || (*valid)[i];
    data.samples[i] = ok ? static_cast<float>(values[i])
                         : std::numeric_limits<float>::quiet_NaN();
  }
  write_pfm_impl(path, data);
}

PfmScalar read_pfm(const fs::path& path) {
  const PfmData data = read_pfm_impl(path);
  if (data.channels != 1) fail(path, "expected a 1-channel map");
  PfmScalar out;
  out.values = Grid<double>(data.width, data.height, 0.0);
  out.valid = Grid<std::uint8_t>(data.width, data.height, 0);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const float v = data.samples[i];
    if (std::isfinite(v)) {
      out.values[i] = v;
      out.valid[i] = 1;
    } else {
      out.values[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

void write_depth_pfm(const fs::path& path, const DepthField& depth) {
  write_pfm(path, depth.values, &depth.valid);
}

DepthField read_depth_pfm(const fs::path& path) {
  const PfmScalar raw = read_pfm(path);
  DepthField depth(raw.values.width(), raw.values.height());
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    if (raw.valid[i] && raw.values[i] > 0.0) {
      depth.values[i] = raw.values[i];
      depth.valid[i] = 1;
    }
  }
  return depth;
}

void write_pfm3(const fs::path& path, const Grid<double>& c0, const Grid<double>& c1,
                const Grid<double>& c2, const Grid<std::uint8_t>* valid) {
  PfmData data;
  data.width = c0.width();
  data.height = c0.height();
  data.channels = 3;
  data.samples.resize(c0.size() * 3);
  for (std::size_t i = 0; i < c0.size(); ++i) {
    const bool ok = !valid || (*valid)[i];
    const float nan = std::numeric_limits<float>::quiet_NaN();
    data.samples[i * 3 + 0] = ok ? static_cast<float>(c0[i]) : nan;
    data.samples[i * 3 + 1] = ok ? static_cast<float>(c1[i]) : nan;
    data.samples[i * 3 + 2] = ok ? static_cast<float>(c2[i]) : nan;
  }
  write_pfm_impl(path, data);
}

PfmPlanes read_pfm3(const fs::path& path) {
  const PfmData data = read_pfm_impl(path);
  if (data.channels != 3) fail(path, "expected a 3-channel map");
  PfmPlanes out;
  for (auto& c : out.channels) c = Grid<double>(data.width, data.height, 0.0);
  out.valid = Grid<std::uint8_t>(data.width, data.height, 0);
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    bool ok = true;
    for (int c = 0; c < 3; ++c) {
      const float v = data.samples[i * 3 + c];
      out.channels[c][i] = v;
      ok &= std::isfinite(v) != 0;
    }
    out.valid[i] = ok;
  }
  return out;
}

void write_flo(const fs::path& path, const FlowField& flow) {
  std::string out;
  put_f32_le(out, 202021.25f);
  put_i32_le(out, flow.width());
  put_i32_le(out, flow.height());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      put_f32_le(out, static_cast<float>(flow.du.at(x, y)));
      put_f32_le(out, static_cast<float>(flow.dv.at(x, y)));
    }
  }
  write_file_atomic(path, out);
}

FlowField read_flo(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12) fail(path, "truncated header", static_cast<std::int64_t>(bytes.size()));
  const float magic = get_f32(bytes, 0, true);
  if (magic != 202021.25f) fail(path, "bad magic", 0);
  const std::int32_t w = get_i32_le(bytes, 4);
  const std::int32_t h = get_i32_le(bytes, 8);
  if (w <= 0 || h <= 0) fail(path, "non-positive dimensions", 4);
  const std::size_t need = 12 + static_cast<std::size_t>(w) * h * 8;
  if (bytes.size() < need) fail(path, "truncated payload", static_cast<std::int64_t>(bytes.size()));
  FlowField flow(w, h);
  std::size_t pos = 12;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      flow.du.at(x, y) = get_f32(bytes, pos, true);
      flow.dv.at(x, y) = get_f32(bytes, pos + 4, true);
      pos += 8;
    }
  }
  return flow;
}

void write_ppm(const fs::path& path, const ImageRGB& image) {
  std::string out = "P6\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, x, y), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
      }
    }
  }
  write_file_atomic(path, out);
}

ImageRGB read_ppm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, &pos, path);
  if (magic != "P6") fail(path, "bad magic '" + magic + "', expected P6", 0);
  const int w = parse_int(next_token(bytes, &pos, path), path, pos);
  const int h = parse_int(next_token(bytes, &pos, path), path, pos);
  const int maxval = parse_int(next_token(bytes, &pos, path), path, pos);
  if (maxval != 255) fail(path, "unsupported maxval " + std::to_string(maxval), pos);
  if (w <= 0 || h <= 0) fail(path, "non-positive dimensions", pos);
  ++pos;  // single whitespace after the header
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) {
    fail(path, "truncated payload", static_cast<std::int64_t>(bytes.size()));
  }
  ImageRGB image(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(c, x, y) =
            static_cast<unsigned char>(bytes[pos + (static_cast<std::size_t>(y) * w + x) * 3 + c]) /
            255.0;
      }
    }
  }
  return image;
}

void write_pgm16(const fs::path& path, const InstanceMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width()) + " " +
                    std::to_string(mask.height()) + "\n65535\n";
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const std::int32_t id = mask.ids.at(x, y);
      if (id < 0 || id > 65535) fail(path, "instance id out of the 16-bit range");
      out.push_back(static_cast<char>((id >> 8) & 0xff));  // big-endian samples
      out.push_back(static_cast<char>(id & 0xff));
    }
  }
  write_file_atomic(path, out);
}

InstanceMask read_pgm16(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, &pos, path);
  if (magic != "P5") fail(path, "bad magic '" + magic + "', expected P5", 0);
  const int w = parse_int(next_token(bytes, &pos, path), path, pos);
  const int h = parse_int(next_token(bytes, &pos, path), path, pos);
  const int maxval = parse_int(next_token(bytes, &pos, path), path, pos);
  if (maxval != 65535) fail(path, "unsupported maxval " + std::to_string(maxval), pos);
  if (w <= 0 || h <= 0) fail(path, "non-positive dimensions", pos);
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  if (bytes.size() - pos < need) {
    fail(path, "truncated payload", static_cast<std::int64_t>(bytes.size()));
  }
  InstanceMask mask(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t at = pos + (static_cast<std::size_t>(y) * w + x) * 2;
      mask.ids.at(x, y) = static_cast<std::int32_t>(
          (static_cast<unsigned char>(bytes[at]) << 8) |
          static_cast<unsigned char>(bytes[at + 1]));
    }
  }
  return mask;
}

void write_poses(const fs::path& path, const std::vector<std::pair<int, PoseSE3>>& poses) {
  std::ostringstream os;
  for (const auto& [id, pose] : poses) {
    os << id;
    const Eigen::Matrix4d m = pose.matrix();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) os << " " << format_full(m(r, c));
    }
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

std::vector<std::pair<int, PoseSE3>> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<std::pair<int, PoseSE3>> poses;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int id = 0;
    if (!(ls >> id)) fail(path, "malformed frame id at row " + std::to_string(row));
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        if (!(ls >> m(r, c))) {
          fail(path, "expected 16 matrix entries at row " + std::to_string(row));
        }
      }
    }
    const Eigen::Matrix3d rot = m.block<3, 3>(0, 0);
    const double err = rotation_error(rot);
    if (err > 1e-6) {
      fail(path, "non-orthonormal rotation at row " + std::to_string(row));
    }
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
      fail(path, "bottom row is not 0 0 0 1 at row " + std::to_string(row));
    }
    // Full-precision files parse back bit-exactly; only project to the
    // nearest rotation when the file actually drifted.
    const Eigen::Matrix3d fixed = err > 1e-9 ? orthonormalize_rotation(rot) : rot;
    poses.emplace_back(id, PoseSE3(fixed, m.block<3, 1>(0, 3)));
  }
  return poses;
}

void write_intrinsics(const fs::path& path, const Intrinsics& K) {
  std::ostringstream os;
  os << format_full(K.fx) << " " << format_full(K.fy) << " " << format_full(K.cx) << " "
     << format_full(K.cy) << " " << K.width << " " << K.height << "\n";
  write_file_atomic(path, os.str());
}

Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  Intrinsics K;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height)) {
    fail(path, "expected 'fx fy cx cy width height'");
  }
  if (!K.ok()) fail(path, "intrinsics violate the pinhole invariants");
  return K;
}

void write_sparse(const fs::path& path, const SparseDepth& sparse) {
  std::ostringstream os;
  for (int y = 0; y < sparse.height(); ++y) {
    for (int x = 0; x < sparse.width(); ++x) {
      if (!sparse.valid.at(x, y)) continue;
      os << x << " " << y << " " << format_full(sparse.values.at(x, y)) << "\n";
    }
  }
  write_file_atomic(path, os.str());
}

SparseDepth read_sparse(const fs::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  SparseDepth sparse(width, height);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int u = 0, v = 0;
    double d = 0.0;
    if (!(ls >> u >> v >> d)) fail(path, "malformed sample at row " + std::to_string(row));
    if (u < 0 || u >= width || v < 0 || v >= height) {
      fail(path, "sample out of bounds at row " + std::to_string(row));
    }
    if (!(d > 0.0) || !std::isfinite(d)) {
      fail(path, "non-positive depth at row " + std::to_string(row));
    }
    sparse.values.at(u, v) = d;
    sparse.valid.at(u, v) = 1;
  }
  return sparse;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  auto as_double = [&] { return std::stod(value); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_bool = [&] {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw std::runtime_error("config: boolean expected for " + key);
  };
  if (key == "frames_dir") frames_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "steps") steps = as_int();
  else if (key == "learning_rate") learning_rate = as_double();
  else if (key == "beta1") beta1 = as_double();
  else if (key == "beta2") beta2 = as_double();
  else if (key == "eps_adam") eps_adam = as_double();
  else if (key == "lambda_depth") lambda_depth = as_double();
  else if (key == "lambda_photometric") lambda_photometric = as_double();
  else if (key == "lambda_smoothness") lambda_smoothness = as_double();
  else if (key == "lambda_flow_shape") lambda_flow_shape = as_double();
  else if (key == "lambda_normal_scale") lambda_normal_scale = as_double();
  else if (key == "sample_ratio") sample_ratio = as_double();
  else if (key == "ground_threshold_deg") ground_threshold_deg = as_double();
  else if (key == "patch_size") patch_size = as_int();
  else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "detach_median") detach_median = as_bool();
  else if (key == "optimize_neighbors") optimize_neighbors = as_bool();
  else if (key == "init_mode") init_mode = value;
  else if (key == "init_sigma") init_sigma = as_double();
  else if (key == "median_scaling") median_scaling = as_bool();
  else if (key == "min_depth") min_depth = as_double();
  else if (key == "max_depth") max_depth = as_double();
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

PipelineConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  PipelineConfig cfg;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail(path, "expected key=value at line " + std::to_string(row));
    }
    auto strip = [](std::string s) {
      const std::size_t x = s.find_first_not_of(" \t");
      const std::size_t y = s.find_last_not_of(" \t");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    try {
      cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      fail(path, std::string(e.what()) + " at line " + std::to_string(row));
    }
  }
  return cfg;
}

namespace {
std::string frame_tag(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", frame);
  return buf;
}
}  // namespace

std::string frame_image_name(int frame) { return "frame_" + frame_tag(frame) + ".ppm"; }
std::string frame_depth_gt_name(int frame) { return "depth_gt_" + frame_tag(frame) + ".pfm"; }
std::string frame_mask_name(int frame) { return "mask_" + frame_tag(frame) + ".pgm"; }
std::string frame_flow_name(int frame, int neighbor) {
  return "flow_" + frame_tag(frame) + "_to_" + frame_tag(neighbor) + ".flo";
}
std::string frame_sparse_name(int frame) { return "sparse_" + frame_tag(frame) + ".txt"; }
std::string frame_depth_est_name(int frame) { return "depth_est_" + frame_tag(frame) + ".pfm"; }
std::string frame_trace_name(int frame) { return "trace_" + frame_tag(frame) + ".txt"; }

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text);
}

}  // namespace depthopt
