#include "tubetrack/grid/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace tubetrack {

namespace {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
void write_nrrd(const Volume<T>& v, const char* type,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write volume: " + path.string());
  const auto& n = v.sizes();
  const std::string s = format_double(v.spacing_mm());
  out << "NRRD0004\n"
      << "type: " << type << "\n"
      << "dimension: 3\n"
      << "sizes: " << n[0] << " " << n[1] << " " << n[2] << "\n"
      << "spacings: " << s << " " << s << " " << s << "\n"
      << "encoding: raw\n"
      << "endian: little\n"
      << "\n";
  out.write(reinterpret_cast<const char*>(v.data().data()),
            static_cast<std::streamsize>(v.voxel_count() * sizeof(T)));
  if (!out) throw DataError("failed writing volume payload: " + path.string());
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void save_volume(const RealVolume& v, const std::filesystem::path& path) {
  write_nrrd(v, "float", path);
}

void save_volume(const MaskVolume& v, const std::filesystem::path& path) {
  write_nrrd(v, "uchar", path);
}

AnyVolume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read volume: " + path.string());
  const std::string where = " (" + path.string() + ")";

  std::string line;
  if (!std::getline(in, line) || trim(line) != "NRRD0004") {
    throw NrrdHeaderError("missing NRRD0004 magic" + where);
  }
  std::map<std::string, std::string> fields;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      terminated = true;
      break;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw NrrdHeaderError("header line without ':' '" + line + "'" + where);
    }
    const std::string key = trim(line.substr(0, colon));
    if (fields.count(key)) throw NrrdHeaderError("duplicate key " + key + where);
    fields[key] = trim(line.substr(colon + 1));
  }
  if (!terminated) throw NrrdHeaderError("header not terminated by a blank line" + where);

  for (const auto& [key, _] : fields) {
    if (key != "type" && key != "dimension" && key != "sizes" &&
        key != "spacings" && key != "encoding" && key != "endian") {
      throw NrrdHeaderError("unexpected header key '" + key + "'" + where);
    }
  }
  for (const char* key : {"type", "dimension", "sizes", "spacings", "encoding"}) {
    if (!fields.count(key)) {
      throw NrrdHeaderError(std::string("missing header key '") + key + "'" + where);
    }
  }
  if (fields["encoding"] != "raw") {
    throw NrrdUnsupportedEncodingError("unsupported encoding '" +
                                       fields["encoding"] + "'" + where);
  }
  if (fields.count("endian") && fields["endian"] != "little") {
    throw NrrdUnsupportedEncodingError("unsupported endian '" + fields["endian"] +
                                       "'" + where);
  }
  const std::string type = fields["type"];
  if (type != "float" && type != "uchar") {
    throw NrrdUnsupportedTypeError("unsupported element type '" + type + "'" + where);
  }
  if (fields["dimension"] != "3") throw NrrdHeaderError("dimension must be 3" + where);

  GridSize sizes{};
  {
    std::istringstream ss(fields["sizes"]);
    std::string extra;
    if (!(ss >> sizes[0] >> sizes[1] >> sizes[2]) || (ss >> extra)) {
      throw NrrdHeaderError("malformed sizes '" + fields["sizes"] + "'" + where);
    }
    for (int s : sizes) {
      if (s <= 0) throw NrrdHeaderError("non-positive size" + where);
    }
  }
  double spacing = 0.0;
  {
    std::istringstream ss(fields["spacings"]);
    double s0, s1, s2;
    std::string extra;
    if (!(ss >> s0 >> s1 >> s2) || (ss >> extra)) {
      throw NrrdHeaderError("malformed spacings '" + fields["spacings"] + "'" + where);
    }
    if (!(s0 > 0.0) || s0 != s1 || s0 != s2) {
      throw NrrdHeaderError("spacings must be positive and isotropic" + where);
    }
    spacing = s0;
  }

  const std::size_t count = static_cast<std::size_t>(sizes[0]) * sizes[1] * sizes[2];
  const std::size_t elem = type == "float" ? sizeof(float) : sizeof(std::uint8_t);
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::size_t>(in.tellg() - payload_start);
  in.seekg(payload_start);
  if (payload_bytes != count * elem) {
    throw NrrdSizeMismatchError("payload holds " + std::to_string(payload_bytes) +
                                " bytes, header implies " +
                                std::to_string(count * elem) + where);
  }

  if (type == "float") {
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * elem));
    return RealVolume(sizes, spacing, std::move(data));
  }
  std::vector<std::uint8_t> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count));
  for (auto v : data) {
    if (v > 1) throw NrrdHeaderError("binary volume holds values other than 0/1" + where);
  }
  return MaskVolume(sizes, spacing, std::move(data));
}

RealVolume load_real_volume(const std::filesystem::path& path) {
  auto v = load_volume(path);
  if (auto* r = std::get_if<RealVolume>(&v)) return std::move(*r);
  throw NrrdUnsupportedTypeError("expected a float volume: " + path.string());
}

MaskVolume load_mask_volume(const std::filesystem::path& path) {
  auto v = load_volume(path);
  if (auto* m = std::get_if<MaskVolume>(&v)) return std::move(*m);
  throw NrrdUnsupportedTypeError("expected a uchar volume: " + path.string());
}

}  // namespace tubetrack
