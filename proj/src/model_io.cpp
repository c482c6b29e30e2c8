#include "ftnn/model_io.hpp"

#include <zlib.h>

#include <fstream>

#include "json.hpp"

#include "ftnn/error.hpp"
#include "ftnn/serialize_util.hpp"

namespace ftnn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'T', 'N', 'N', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kKindStacked = 0;
constexpr std::uint8_t kKindDeep = 1;

void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (std::size_t i = 0; i < t.size(); ++i) w.f64(t[i]);
}

Tensor read_tensor(ByteReader& r) {
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw ParseError("model file: implausible tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
        d = r.u64();
        total *= d;
    }
    std::vector<double> data(total);
    for (auto& v : data) v = r.f64();
    return Tensor(std::move(shape), std::move(data));
}

std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ParseError("model file: unknown activation '" + s + "'");
}

void write_payload(std::uint8_t kind, const json& meta, const std::vector<const Tensor*>& tensors,
                   const std::string& path) {
    ByteWriter w;
    w.raw(kMagic, 8);
    w.u32(kVersion);
    w.u8(kind);
    w.str(meta.dump());  // nlohmann keeps object keys sorted -> canonical
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) write_tensor(w, *t);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(w.bytes.data()), static_cast<uInt>(w.bytes.size())));
    w.u32(crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

json provenance_meta(const ModelProvenance& prov) {
    return json{{"config_hash", prov.config_hash}, {"seed", prov.seed}};
}

}  // namespace

void save_model(const StackedModel& model, const std::string& path, const ModelProvenance& prov) {
    json meta;
    meta["input_shape"] = model.input_shape;
    meta["n_classes"] = model.n_classes;
    meta["seed"] = model.seed;
    meta["provenance"] = provenance_meta(prov);
    meta["has_final_fc"] = model.final_fc.has_value();
    json stages = json::array();
    std::vector<const Tensor*> tensors;
    for (const FrozenStage& stage : model.stages) {
        json s;
        s["index"] = stage.index;
        s["pooled"] = stage.pooled;
        s["frozen_hash"] = stage.frozen_hash;
        if (const auto* dense = std::get_if<DenseLayer>(&stage.layer)) {
            s["kind"] = "dense";
            s["activation"] = activation_name(dense->activation);
            tensors.push_back(&dense->weights);
            tensors.push_back(&dense->biases);
        } else {
            const auto& conv = std::get<ConvLayer>(stage.layer);
            s["kind"] = "conv";
            tensors.push_back(&conv.filters);
            tensors.push_back(&conv.biases);
        }
        stages.push_back(std::move(s));
    }
    meta["stages"] = std::move(stages);
    if (model.final_fc) {
        meta["final_fc_activation"] = activation_name(model.final_fc->activation);
        tensors.push_back(&model.final_fc->weights);
        tensors.push_back(&model.final_fc->biases);
    }
    tensors.push_back(&model.head.weights);
    tensors.push_back(&model.head.biases);
    write_payload(kKindStacked, meta, tensors, path);
}

void save_model(const DeepNet& model, const std::string& path, const ModelProvenance& prov) {
    json meta;
    meta["input_shape"] = model.input_shape;
    meta["n_classes"] = model.n_classes();
    meta["provenance"] = provenance_meta(prov);
    json blocks = json::array();
    std::vector<const Tensor*> tensors;
    for (const auto& block : model.blocks) {
        json b;
        b["pool_after"] = block.pool_after;
        b["dropout_after"] = block.dropout_after;
        if (const auto* dense = std::get_if<DenseLayer>(&block.layer)) {
            b["kind"] = "dense";
            b["activation"] = activation_name(dense->activation);
            tensors.push_back(&dense->weights);
            tensors.push_back(&dense->biases);
        } else {
            const auto& conv = std::get<ConvLayer>(block.layer);
            b["kind"] = "conv";
            tensors.push_back(&conv.filters);
            tensors.push_back(&conv.biases);
        }
        blocks.push_back(std::move(b));
    }
    meta["blocks"] = std::move(blocks);
    tensors.push_back(&model.head.weights);
    tensors.push_back(&model.head.biases);
    write_payload(kKindDeep, meta, tensors, path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() < 17) throw IoError(path + ": checksum failure (file too short)");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
    const auto actual =
        static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
    if (stored != actual) throw IoError(path + ": checksum failure, file is corrupt or truncated");

    ByteReader r(bytes.data(), body);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw ParseError(path + ": not a model file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw ParseError(path + ": unsupported model format version " + std::to_string(version) +
                         " (reader supports " + std::to_string(kVersion) + ")");
    }
    const std::uint8_t kind = r.u8();
    json meta;
    try {
        meta = json::parse(r.str());
    } catch (const json::exception& e) {
        throw ParseError(path + ": bad metadata block: " + e.what());
    }
    const std::uint32_t tensor_count = r.u32();
    std::vector<Tensor> tensors;
    tensors.reserve(tensor_count);
    for (std::uint32_t i = 0; i < tensor_count; ++i) tensors.push_back(read_tensor(r));

    LoadedModel out;
    out.provenance.config_hash = meta.at("provenance").at("config_hash").get<std::uint64_t>();
    out.provenance.seed = meta.at("provenance").at("seed").get<std::uint64_t>();
    std::size_t next = 0;
    auto take = [&]() -> Tensor& {
        if (next >= tensors.size()) throw ParseError(path + ": tensor block count too small");
        return tensors[next++];
    };

    if (kind == kKindStacked) {
        StackedModel model;
        model.input_shape = meta.at("input_shape").get<std::vector<std::size_t>>();
        model.n_classes = meta.at("n_classes").get<int>();
        model.seed = meta.at("seed").get<std::uint64_t>();
        for (const auto& s : meta.at("stages")) {
            FrozenStage stage;
            stage.index = s.at("index").get<std::size_t>();
            stage.pooled = s.at("pooled").get<bool>();
            stage.frozen_hash = s.at("frozen_hash").get<std::uint64_t>();
            if (s.at("kind") == "dense") {
                DenseLayer dense;
                dense.activation = activation_from(s.at("activation").get<std::string>());
                dense.weights = std::move(take());
                dense.biases = std::move(take());
                stage.layer = std::move(dense);
            } else {
                ConvLayer conv;
                conv.filters = std::move(take());
                conv.biases = std::move(take());
                stage.layer = std::move(conv);
            }
            model.stages.push_back(std::move(stage));
        }
        if (meta.at("has_final_fc").get<bool>()) {
            DenseLayer fc;
            fc.activation = activation_from(meta.at("final_fc_activation").get<std::string>());
            fc.weights = std::move(take());
            fc.biases = std::move(take());
            model.final_fc = std::move(fc);
        }
        model.head.weights = std::move(take());
        model.head.biases = std::move(take());
        out.model = std::move(model);
    } else if (kind == kKindDeep) {
        DeepNet model;
        model.input_shape = meta.at("input_shape").get<std::vector<std::size_t>>();
        for (const auto& b : meta.at("blocks")) {
            DeepNet::Block block;
            block.pool_after = b.at("pool_after").get<bool>();
            block.dropout_after = b.at("dropout_after").get<double>();
            if (b.at("kind") == "dense") {
                DenseLayer dense;
                dense.activation = activation_from(b.at("activation").get<std::string>());
                dense.weights = std::move(take());
                dense.biases = std::move(take());
                block.layer = std::move(dense);
            } else {
                ConvLayer conv;
                conv.filters = std::move(take());
                conv.biases = std::move(take());
                block.layer = std::move(conv);
            }
            model.blocks.push_back(std::move(block));
        }
        model.head.weights = std::move(take());
        model.head.biases = std::move(take());
        out.model = std::move(model);
    } else {
        throw ParseError(path + ": unknown model kind " + std::to_string(kind));
    }
    if (next != tensors.size()) throw ParseError(path + ": trailing tensors in model file");
    return out;
}

}  // namespace ftnn
