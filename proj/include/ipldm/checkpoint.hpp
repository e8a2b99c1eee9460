#pragma once

#include <map>
#include <set>
#include <string>

#include "ipldm/tensor.hpp"

namespace ipldm {

// Binary model container: magic "IPLDM1", config snapshot, completed-stage
// markers, then a named f32 tensor table (little-endian payload).
// save()/load() round-trip every tensor bit-exactly.
struct Checkpoint {
    std::map<std::string, std::string> config;
    std::set<std::string> stages_done;
    std::vector<std::pair<std::string, Tensor>> tensors;

    static constexpr const char* kMagic = "IPLDM1";

    void set_tensor(const std::string& name, const Tensor& t);
    const Tensor* find(const std::string& name) const;

    bool has_stage(const std::string& stage) const { return stages_done.count(stage) > 0; }
    void mark_stage(const std::string& stage) { stages_done.insert(stage); }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

// FNV-1a over a file's bytes; recorded in generation sidecars.
uint64_t file_hash(const std::string& path);

}  // namespace ipldm
