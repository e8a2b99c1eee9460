#include "ipldm/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace ipldm {

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
void write_i64(std::ostream& out, int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}
void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
int64_t read_i64(std::istream& in) {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::string read_str(std::istream& in) {
    uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

}  // namespace

void Checkpoint::set_tensor(const std::string& name, const Tensor& t) {
    for (auto& [n, existing] : tensors)
        if (n == name) {
            existing = t;
            return;
        }
    tensors.emplace_back(name, t);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ContractError("cannot open " + tmp + " for writing");
        out.write(kMagic, 6);
        write_u32(out, static_cast<uint32_t>(config.size()));
        for (const auto& [k, v] : config) {
            write_str(out, k);
            write_str(out, v);
        }
        write_u32(out, static_cast<uint32_t>(stages_done.size()));
        for (const auto& s : stages_done) write_str(out, s);
        write_u32(out, static_cast<uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            write_str(out, name);
            out.put(0);  // dtype f32
            write_u32(out, static_cast<uint32_t>(t.ndim()));
            for (int64_t d : t.shape()) write_i64(out, d);
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!out) throw ContractError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ContractError("cannot rename " + tmp + " to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open checkpoint " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kMagic, 6) != 0)
        throw ContractError(path + ": bad checkpoint magic");
    Checkpoint cp;
    uint32_t nconf = read_u32(in);
    for (uint32_t i = 0; i < nconf; ++i) {
        std::string k = read_str(in);
        cp.config[k] = read_str(in);
    }
    uint32_t nstages = read_u32(in);
    for (uint32_t i = 0; i < nstages; ++i) cp.stages_done.insert(read_str(in));
    uint32_t ntensors = read_u32(in);
    for (uint32_t i = 0; i < ntensors; ++i) {
        std::string name = read_str(in);
        int dtype = in.get();
        if (dtype != 0) throw ContractError(path + ": unsupported tensor dtype");
        uint32_t ndim = read_u32(in);
        Shape shape;
        for (uint32_t d = 0; d < ndim; ++d) shape.push_back(read_i64(in));
        Tensor t = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        cp.tensors.emplace_back(name, t);
    }
    if (!in) throw ContractError(path + ": truncated checkpoint");
    return cp;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

}  // namespace ipldm
