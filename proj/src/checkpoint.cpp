#include "vecformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vecformer/errors.hpp"

namespace vecformer {

using nlohmann::json;

namespace {

// Payload is little-endian on disk regardless of host order.
void to_le_bytes(const double* src, char* dst, std::size_t count) {
    std::memcpy(dst, src, count * sizeof(double));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            char* p = dst + i * sizeof(double);
            std::reverse(p, p + sizeof(double));
        }
    }
}

void from_le_bytes(const char* src, double* dst, std::size_t count) {
    std::memcpy(dst, src, count * sizeof(double));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            char* p = reinterpret_cast<char*>(dst + i);
            std::reverse(p, p + sizeof(double));
        }
    }
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& file) const {
    json manifest;
    manifest["format"] = kFormat;
    manifest["stage"] = stage;
    manifest["config"] = config;
    manifest["rng_state"] = rng_state;
    json tensors = json::array();
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
    }
    manifest["tensors"] = std::move(tensors);

    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream f(file, std::ios::binary);
    if (!f) throw IoError("cannot open " + file.string() + " for writing");
    f << manifest.dump() << "\n";
    std::vector<char> buf;
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        buf.resize(static_cast<std::size_t>(t.numel()) * sizeof(double));
        to_le_bytes(t.data(), buf.data(), static_cast<std::size_t>(t.numel()));
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    if (!f) throw IoError("short write to " + file.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + file.string());
    std::string line;
    if (!std::getline(f, line)) throw FormatError(file.string() + ": missing manifest line");
    json manifest;
    try {
        manifest = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": bad manifest: " + e.what());
    }
    if (!manifest.contains("format") || manifest["format"] != kFormat)
        throw FormatError(file.string() + ": format version mismatch, expected " + std::string(kFormat) +
                          ", got " + manifest.value("format", "<missing>"));

    Checkpoint ck;
    ck.stage = manifest.at("stage").get<int>();
    ck.config = manifest.value("config", json::object());
    if (manifest.contains("rng_state")) {
        auto v = manifest["rng_state"].get<std::vector<std::uint64_t>>();
        if (v.size() != 4) throw FormatError(file.string() + ": bad rng_state");
        std::copy(v.begin(), v.end(), ck.rng_state.begin());
    }
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        Tensor t(shape);
        std::vector<char> buf(static_cast<std::size_t>(t.numel()) * sizeof(double));
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (f.gcount() != static_cast<std::streamsize>(buf.size()))
            throw FormatError(file.string() + ": truncated payload for tensor '" + name + "'");
        from_le_bytes(buf.data(), t.data(), static_cast<std::size_t>(t.numel()));
        ck.params.insert(name, std::move(t));
    }
    return ck;
}

}  // namespace vecformer
