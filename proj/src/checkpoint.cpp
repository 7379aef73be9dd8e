#include "lbs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "lbs/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace lbs::checkpoint {

using nlohmann::json;

namespace {

template <class U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <class U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::string take(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (n > end_ - pos_)
            throw FormatError("checkpoint", std::string("truncated ") + what + " at byte offset " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(const char* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

}  // namespace

std::string encode(const ParamRegistry& registry, json meta) {
    json index = json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < registry.size(); ++i) {
        index.push_back({{"name", registry.name(i)}, {"shape", registry.value(i).shape()}, {"offset", offset}});
        offset += registry.value(i).size();
    }
    meta["tensors"] = index;
    const std::string text = meta.dump();

    std::string out(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(text.size()));
    out += text;
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& v = registry.value(i).values();
        out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    put(out, crc(out.data(), out.size()));
    return out;
}

Loaded decode(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic + 4 + 8 + 4)
        throw FormatError("checkpoint", "file too short (" + std::to_string(bytes.size()) + " bytes) at byte offset 0");
    const std::size_t body = bytes.size() - 4;
    Reader r(bytes, body);
    if (r.take(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic))
        throw FormatError("checkpoint", "bad magic at byte offset 0");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion)
        throw FormatError("checkpoint", "unsupported version " + std::to_string(version) + " at byte offset 8");

    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (crc(bytes.data(), body) != stored)
        throw FormatError("checkpoint", "checksum mismatch (stored at byte offset " + std::to_string(body) + ")");

    const std::size_t len_at = r.pos();
    const auto len = r.get<std::uint64_t>("metadata length");
    if (len > body) throw FormatError("checkpoint", "metadata length out of range at byte offset " + std::to_string(len_at));
    const std::size_t meta_at = r.pos();
    Loaded out;
    try {
        out.meta = json::parse(r.take(static_cast<std::size_t>(len), "metadata"));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint", "malformed metadata at byte offset " + std::to_string(meta_at) + " (" + e.what() + ")");
    }
    const std::size_t payload_at = r.pos();
    try {
        for (const auto& entry : out.meta.at("tensors")) {
            NamedTensor t;
            t.name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<diff::Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            std::vector<float> values(diff::shape_size(shape));
            const std::size_t at = payload_at + offset * sizeof(float);
            if (offset > body || at + values.size() * sizeof(float) > body)
                throw FormatError("checkpoint", "truncated payload for tensor '" + t.name + "' at byte offset " +
                                                    std::to_string(at));
            std::memcpy(values.data(), bytes.data() + at, values.size() * sizeof(float));
            t.value = Tensor(shape, std::move(values));
            out.tensors.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw FormatError("checkpoint", std::string("bad tensor index in metadata at byte offset ") +
                                            std::to_string(meta_at) + " (" + e.what() + ")");
    }
    return out;
}

void save_checkpoint(const std::string& path, const ParamRegistry& registry, json meta) {
    const std::string bytes = encode(registry, std::move(meta));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint", "cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("checkpoint", "write failed for '" + path + "'");
}

Loaded load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint", "cannot open '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

void apply(const Loaded& loaded, ParamRegistry& registry) {
    std::vector<bool> seen(registry.size(), false);
    for (const auto& t : loaded.tensors) {
        auto id = registry.find(t.name);
        if (!id) throw ContractError("checkpoint", "unexpected tensor '" + t.name + "'");
        if (registry.value(*id).shape() != t.value.shape())
            throw ContractError("checkpoint", "tensor '" + t.name + "' has shape " + diff::shape_str(t.value.shape()) +
                                                  ", model expects " + diff::shape_str(registry.value(*id).shape()));
        registry.value(*id) = t.value;
        seen[id->index] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw ContractError("checkpoint", "missing tensor '" + registry.name(i) + "'");
}

json make_meta(const training::TrainConfig& config, const data::NormStats& norm, int epoch, double best_val,
               const std::string& run_config) {
    return json{{"config", config},
                {"norm", {{"mean", norm.mean}, {"std", norm.std}, {"degenerate", norm.degenerate}}},
                {"epoch", epoch},
                {"best_val", best_val},
                {"run_config", run_config}};
}

TrainedModel load_trained(const std::string& path) {
    auto loaded = load_checkpoint(path);
    TrainedModel m;
    try {
        m.config = loaded.meta.at("config").get<training::TrainConfig>();
        const auto& n = loaded.meta.at("norm");
        m.norm = {n.at("mean").get<double>(), n.at("std").get<double>(), n.at("degenerate").get<bool>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint", std::string("incomplete metadata (") + e.what() + ")");
    }
    m.model = LbsModel::declare(m.params, m.config.model);
    apply(loaded, m.params);
    m.meta = std::move(loaded.meta);
    return m;
}

}  // namespace lbs::checkpoint
