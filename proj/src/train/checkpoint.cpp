#include "marecg/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace marecg::train {

namespace {

using nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t at = 0;

    void need(std::size_t n) const {
        if (at + n > b.size()) throw std::runtime_error("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
        at += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + at), n);
        at += n;
        return s;
    }
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
    json manifest = {
        {"format_version", c.manifest.format_version},
        {"ablation", c.manifest.ablation},
        {"seed", c.manifest.seed},
        {"config_hash", c.manifest.config_hash},
        {"config", c.manifest.config_dump},
        {"epoch", c.manifest.epoch},
        {"step", c.manifest.step},
        {"ledger_tail", c.manifest.ledger_tail},
        {"tensor_count", c.tensors.size()},
    };
    std::string mtext = manifest.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
    put_u32(out, static_cast<std::uint32_t>(mtext.size()));
    out.insert(out.end(), mtext.begin(), mtext.end());
    for (const auto& t : c.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        std::size_t numel = 1;
        for (std::size_t e : t.shape) {
            put_u64(out, e);
            numel *= e;
        }
        if (numel != t.data.size()) throw std::runtime_error("tensor " + t.name + " shape mismatch");
        std::size_t off = out.size();
        out.resize(off + 4 * t.data.size());
        std::memcpy(out.data() + off, t.data.data(), 4 * t.data.size());
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    std::string magic = r.str(8);
    if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint (bad magic)");
    std::uint32_t mlen = r.u32();
    json manifest = json::parse(r.str(mlen));
    Checkpoint c;
    c.manifest.format_version = manifest.at("format_version").get<int>();
    c.manifest.ablation = manifest.at("ablation").get<std::string>();
    c.manifest.seed = manifest.at("seed").get<std::uint64_t>();
    c.manifest.config_hash = manifest.at("config_hash").get<std::uint64_t>();
    c.manifest.config_dump = manifest.at("config").get<std::string>();
    c.manifest.epoch = manifest.at("epoch").get<std::uint64_t>();
    c.manifest.step = manifest.at("step").get<std::uint64_t>();
    c.manifest.ledger_tail = manifest.at("ledger_tail").get<std::string>();
    std::size_t count = manifest.at("tensor_count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(r.u32());
        std::uint32_t rank = r.u32();
        std::size_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(static_cast<std::size_t>(r.u64()));
            numel *= t.shape.back();
        }
        r.need(4 * numel);
        t.data.resize(numel);
        std::memcpy(t.data.data(), bytes.data() + r.at, 4 * numel);
        r.at += 4 * numel;
        c.tensors.push_back(std::move(t));
    }
    if (r.at != bytes.size()) throw std::runtime_error("trailing bytes after checkpoint payload");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    auto bytes = serialize_checkpoint(c);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

Checkpoint checkpoint_from_store(const num::ParamStore<float>& ps, CheckpointManifest manifest) {
    Checkpoint c;
    c.manifest = std::move(manifest);
    for (const auto& e : ps) {
        NamedTensor t;
        t.name = e.name;
        t.shape = e.value.shape;
        t.data = e.value.v;
        c.tensors.push_back(std::move(t));
    }
    return c;
}

void load_into_store(const Checkpoint& c, num::ParamStore<float>& ps) {
    if (c.tensors.size() != ps.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(c.tensors.size()) +
                                 " tensors, store expects " + std::to_string(ps.size()));
    for (const auto& t : c.tensors) {
        auto& e = ps.at(ps.find(t.name));
        if (e.value.shape != t.shape)
            throw std::runtime_error("checkpoint tensor " + t.name + " has mismatched shape");
        e.value.v = t.data;
    }
}

}  // namespace marecg::train
