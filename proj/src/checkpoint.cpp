#include "dtmp/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dtmp/kvfile.hpp"

namespace dtmp {

namespace {

constexpr const char* kFormatTag = "dtmp-checkpoint-1";

void append_le(std::vector<char>& buffer, double value) {
    uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
        buffer.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

double read_le(const char* bytes) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

std::string format_double_list(const std::vector<double>& values) {
    std::string out;
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) out.push_back(',');
        out += kv::format_double(values[i]);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& context) {
    std::vector<double> values;
    std::stringstream stream(text);
    std::string field;
    while (std::getline(stream, field, ',')) {
        values.push_back(kv::parse_double(field, context));
    }
    return values;
}

}  // namespace

Checkpoint snapshot(const DtmpModel& model, const NormStats& stats) {
    Checkpoint ckpt;
    ckpt.config = model.config;
    ckpt.variant = model.variant;
    ckpt.stats = stats;
    for (const NamedTensor& param : model.parameters()) {
        ckpt.params.emplace_back(
            param.name, Tensor::from_values(param.tensor.shape(), param.tensor.values()));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& manifest_path,
                     const std::string& blob_path) {
    namespace fs = std::filesystem;
    kv::Document doc;
    doc.set("format", kFormatTag);
    doc.set("blob", fs::path(blob_path).filename().string());
    doc.set("variant", variant_name(ckpt.variant));
    write_config(ckpt.config, doc);
    doc.set("norm_mean", format_double_list(ckpt.stats.mean));
    doc.set("norm_stdev", format_double_list(ckpt.stats.stdev));
    doc.set_int("best_epoch", ckpt.best_epoch);
    doc.set_double("best_val_mae", ckpt.best_val_mae);

    std::vector<char> blob;
    int64_t offset = 0;
    for (const auto& [name, tensor] : ckpt.params) {
        std::string entry = name + ";" + std::to_string(offset) + ";";
        entry += kv::format_int_list(tensor.shape());
        doc.set("param", entry);
        for (double v : tensor.values()) append_le(blob, v);
        offset += tensor.numel();
    }
    doc.set_int("total_values", offset);

    std::ofstream out(blob_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint blob " + blob_path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("write failed for " + blob_path);
    out.close();

    kv::write_file(doc, manifest_path);
}

Checkpoint load_checkpoint(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    kv::Document doc = kv::parse_file(manifest_path);
    if (doc.get_or("format", "") != kFormatTag) {
        throw std::runtime_error(manifest_path + ": not a checkpoint manifest (format '" +
                                 doc.get_or("format", "<missing>") + "')");
    }

    Checkpoint ckpt;
    ckpt.variant = parse_variant(doc.get("variant"));
    ckpt.config = read_config(doc);
    ckpt.stats.mean = parse_double_list(doc.get("norm_mean"), manifest_path + " norm_mean");
    ckpt.stats.stdev = parse_double_list(doc.get("norm_stdev"), manifest_path + " norm_stdev");
    ckpt.best_epoch = doc.get_int("best_epoch");
    ckpt.best_val_mae = doc.get_double("best_val_mae");

    fs::path blob_path = fs::path(manifest_path).parent_path() / doc.get("blob");
    std::ifstream in(blob_path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open checkpoint blob " + blob_path.string());
    std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<char> blob(static_cast<size_t>(size));
    in.read(blob.data(), size);
    if (!in) throw std::runtime_error("read failed for " + blob_path.string());

    int64_t total = doc.get_int("total_values");
    if (size != total * 8) {
        throw std::runtime_error(blob_path.string() + ": expected " + std::to_string(total * 8) +
                                 " bytes, found " + std::to_string(size));
    }

    for (const std::string& entry : doc.all("param")) {
        size_t first = entry.find(';');
        size_t second = entry.find(';', first + 1);
        if (first == std::string::npos || second == std::string::npos) {
            throw std::runtime_error(manifest_path + ": malformed param entry '" + entry + "'");
        }
        std::string name = entry.substr(0, first);
        int64_t offset = kv::parse_int(entry.substr(first + 1, second - first - 1),
                                       manifest_path + " param offset");
        Shape shape = kv::parse_int_list(entry.substr(second + 1), manifest_path + " param shape");
        int64_t count = shape_numel(shape);
        if (offset < 0 || offset + count > total) {
            throw std::runtime_error(manifest_path + ": param '" + name +
                                     "' runs past the end of the blob");
        }
        std::vector<double> values(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) {
            values[static_cast<size_t>(i)] = read_le(blob.data() + (offset + i) * 8);
        }
        Tensor tensor = Tensor::from_values(shape, std::move(values));
        tensor.set_requires_grad(true);
        ckpt.params.emplace_back(std::move(name), std::move(tensor));
    }
    return ckpt;
}

DtmpModel model_from_checkpoint(const Checkpoint& ckpt) {
    DtmpModel model = init_model(ckpt.config, ckpt.variant, 0);
    ParamSet params = model.parameters();
    if (params.size() != ckpt.params.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(ckpt.params.size()) +
                                 " parameters, model expects " + std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, stored] = ckpt.params[i];
        if (params[i].name != name) {
            throw std::runtime_error("checkpoint parameter '" + name + "' at slot " +
                                     std::to_string(i) + " does not match model parameter '" +
                                     params[i].name + "'");
        }
        if (params[i].tensor.shape() != stored.shape()) {
            throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                                     shape_to_string(stored.shape()) + ", model expects " +
                                     shape_to_string(params[i].tensor.shape()));
        }
        params[i].tensor.mutable_values() = stored.values();
    }
    return model;
}

}  // namespace dtmp
