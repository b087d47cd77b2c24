#include "passcam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "passcam/error.hpp"

namespace passcam {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("checkpoint truncated while reading " + what);
    return v;
}

void read_doubles(std::ifstream& in, double* dst, std::size_t n, const std::string& what) {
    if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(double))))
        throw FormatError("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (!ckpt.standardizer.fitted()) throw ConfigError("checkpoint standardizer is not fitted");
    json tensors = json::array();
    for (const auto& s : ckpt.params.layout().slots())
        tensors.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", s.offset}});
    const json header = {{"model_config", model_config_to_json(ckpt.params.config())},
                         {"raster", raster_config_to_json(ckpt.raster)},
                         {"metadata", ckpt.metadata},
                         {"standardizer", {{"fitted_on", ckpt.standardizer.fitted_on()}}},
                         {"param_count", ckpt.params.count()},
                         {"tensors", tensors}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(ckpt.standardizer.mean().data()), kNumFeatures * sizeof(double));
    out.write(reinterpret_cast<const char*>(ckpt.standardizer.stddev().data()), kNumFeatures * sizeof(double));
    out.write(reinterpret_cast<const char*>(ckpt.params.values().data()),
              static_cast<std::streamsize>(ckpt.params.count() * sizeof(double)));
    if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw FormatError(path.string() + " is not a passcam checkpoint");
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto len = read_pod<std::uint64_t>(in, "header length");
    if (len > (std::uint64_t{1} << 30)) throw FormatError("checkpoint header too large");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in header");

    json header;
    try {
        header = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    Checkpoint ckpt;
    ckpt.params = ModelParams(model_config_from_json(header.at("model_config")));
    ckpt.raster = raster_config_from_json(header.at("raster"));
    ckpt.metadata = header.value("metadata", json::object());
    if (header.at("param_count").get<std::size_t>() != ckpt.params.count())
        throw FormatError("checkpoint parameter count does not match its model config");

    std::array<double, kNumFeatures> mean{}, stddev{};
    read_doubles(in, mean.data(), kNumFeatures, "standardizer");
    read_doubles(in, stddev.data(), kNumFeatures, "standardizer");
    ckpt.standardizer = Standardizer(mean, stddev, header.at("standardizer").at("fitted_on").get<std::string>());
    read_doubles(in, ckpt.params.values().data(), ckpt.params.count(), "parameters");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint payload");
    return ckpt;
}

}  // namespace passcam
