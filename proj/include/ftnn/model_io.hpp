#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "ftnn/baseline.hpp"
#include "ftnn/forward_thinking.hpp"

namespace ftnn {

/// Run bookkeeping stored next to the parameters.
struct ModelProvenance {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};

/// Versioned little-endian container: magic, format version, model kind,
/// canonical JSON metadata, raw parameter tensors, trailing CRC32.
/// save -> load -> save is byte-identical.
void save_model(const StackedModel& model, const std::string& path, const ModelProvenance& prov = {});
void save_model(const DeepNet& model, const std::string& path, const ModelProvenance& prov = {});

struct LoadedModel {
    std::variant<StackedModel, DeepNet> model;
    ModelProvenance provenance;

    bool is_stacked() const { return std::holds_alternative<StackedModel>(model); }
    const StackedModel& stacked() const { return std::get<StackedModel>(model); }
    const DeepNet& deep() const { return std::get<DeepNet>(model); }
};

/// Verifies the checksum before parsing; wrong magic / version / corruption
/// raise distinct errors and never return a partial model.
LoadedModel load_model(const std::string& path);

}  // namespace ftnn
