#include "flilab/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include "binary_io.hpp"
#include "flilab/config_json.hpp"

namespace flilab {
namespace {

constexpr char kMagic[4] = {'F', 'L', 'D', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasMask = 1u;
constexpr std::uint32_t kHasTruth = 2u;

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw ContractError(std::string("dataset ") + what + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string sidecar_path(const std::string& path) { return path + ".json"; }

void save_dataset(const FliDataset& ds, const std::string& path) {
  ds.validate();
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    detail::put_le<std::uint32_t>(os, kVersion);
    detail::put_le(os, checked_u32(ds.samples, "N"));
    detail::put_le(os, checked_u32(ds.height, "H"));
    detail::put_le(os, checked_u32(ds.width, "W"));
    detail::put_le(os, checked_u32(ds.gates(), "G"));
    const std::uint32_t flags = (ds.has_mask() ? kHasMask : 0u) | (ds.has_truth() ? kHasTruth : 0u);
    detail::put_le(os, flags);
    detail::put_floats(os, ds.tpsf);
    detail::put_floats(os, ds.irf);
    if (ds.has_truth()) {
      detail::put_floats(os, ds.tau1);
      detail::put_floats(os, ds.tau2);
      detail::put_floats(os, ds.a_r);
    }
    if (ds.has_mask()) detail::put_floats(os, ds.mask);
    os.close();
    if (!os) throw IoError("failed writing " + path);
  }
  const std::string side = sidecar_path(path);
  if (ds.has_config) {
    Json j;
    j["format"] = "FLD1";
    j["seed"] = ds.seed;
    j["axis"] = {{"gates", ds.axis.gates}, {"dt_ps", ds.axis.dt_ps}, {"t0_ps", ds.axis.t0_ps}};
    j["simulate"] = to_json(ds.config);
    std::ofstream os(side, std::ios::trunc);
    if (!os) throw IoError("cannot open " + side + " for writing");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("failed writing " + side);
  } else {
    std::error_code ec;
    std::filesystem::remove(side, ec);
  }
}

FliDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError(FormatErrorCode::truncated, path + ": shorter than its magic");
  if (!std::equal(magic, magic + 4, kMagic))
    throw FormatError(FormatErrorCode::bad_magic, path + ": not an FLD1 dataset");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kVersion) throw FormatError(FormatErrorCode::unsupported_version, path + ": version " + std::to_string(version));
  FliDataset ds;
  ds.samples = detail::get_le<std::uint32_t>(is, "N");
  ds.height = detail::get_le<std::uint32_t>(is, "H");
  ds.width = detail::get_le<std::uint32_t>(is, "W");
  const std::size_t gates = detail::get_le<std::uint32_t>(is, "G");
  const auto flags = detail::get_le<std::uint32_t>(is, "flags");
  if (flags & ~(kHasMask | kHasTruth)) throw FormatError(FormatErrorCode::shape_mismatch, path + ": unknown flag bits");
  if (ds.samples == 0 || ds.height == 0 || ds.width == 0 || gates == 0)
    throw FormatError(FormatErrorCode::shape_mismatch, path + ": zero dimension in header");
  ds.axis = TimeAxis{gates, 40.0, 0.0};

  // Reject headers that promise more data than the file holds before allocating.
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uintmax_t>(is.tellg());
  is.seekg(here);
  const std::uintmax_t px = static_cast<std::uintmax_t>(ds.samples) * ds.height * ds.width;
  std::uintmax_t floats = 2 * px * gates;
  if (flags & kHasTruth) floats += 3 * px;
  if (flags & kHasMask) floats += px;
  if (file_size < static_cast<std::uintmax_t>(here) + floats * 4)
    throw FormatError(FormatErrorCode::truncated, path + ": header dimensions exceed the file size");

  detail::get_floats(is, ds.tpsf, px * gates, "TPSF stack");
  detail::get_floats(is, ds.irf, px * gates, "IRF stack");
  if (flags & kHasTruth) {
    detail::get_floats(is, ds.tau1, px, "tau1 map");
    detail::get_floats(is, ds.tau2, px, "tau2 map");
    detail::get_floats(is, ds.a_r, px, "a_r map");
  }
  if (flags & kHasMask) detail::get_floats(is, ds.mask, px, "mask");

  const std::string side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    const Json j = read_json_file(side);
    StrictObject o(j, side);
    std::string format;
    o.get("format", format);
    if (format != "FLD1") throw ConfigError(o.path("format"), "expected \"FLD1\"");
    o.get("seed", ds.seed);
    if (o.has("axis")) {
      StrictObject a(o.raw("axis"), o.path("axis"));
      std::size_t g = ds.axis.gates;
      a.get("gates", g);
      a.get("dt_ps", ds.axis.dt_ps);
      a.get("t0_ps", ds.axis.t0_ps);
      a.finish();
      if (g != gates) throw FormatError(FormatErrorCode::shape_mismatch, side + ": gate count disagrees with " + path);
    }
    if (o.has("simulate")) {
      ds.config = simulation_from_json(o.raw("simulate"), "simulate");
      ds.has_config = true;
    }
    o.finish();
  }
  ds.validate();
  return ds;
}

}  // namespace flilab
