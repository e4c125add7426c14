#include "fidgp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "fidgp/errors.hpp"
#include "fidgp/harness.hpp"

namespace fidgp {

namespace {

constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_index(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::string encode_base64(const Vector& values) {
    std::vector<unsigned char> bytes(values.size() * sizeof(double));
    if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        unsigned int chunk = static_cast<unsigned int>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) chunk |= static_cast<unsigned int>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) chunk |= static_cast<unsigned int>(bytes[i + 2]);
        out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? kB64Alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? kB64Alphabet[chunk & 63] : '=');
    }
    return out;
}

Vector decode_base64(const std::string& text) {
    std::vector<unsigned char> bytes;
    bytes.reserve(text.size() / 4 * 3);
    unsigned int chunk = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=') break;
        const int v = b64_index(c);
        if (v < 0) throw CheckpointError("invalid base64 character");
        chunk = (chunk << 6) | static_cast<unsigned int>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            bytes.push_back(static_cast<unsigned char>((chunk >> bits) & 0xFF));
        }
    }
    if (bytes.size() % sizeof(double) != 0) {
        throw CheckpointError("base64 payload is not a whole number of doubles");
    }
    Vector values(bytes.size() / sizeof(double));
    if (!values.empty()) std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Vector& data,
                  const ad::Shape& shape) {
    out << "tensor " << name << " " << shape.size();
    for (std::size_t d : shape) out << " " << d;
    out << " f64 " << encode_base64(data) << "\n";
}

struct TensorSlot {
    Vector* data;
    ad::Shape shape;
};

std::map<std::string, TensorSlot> collect_slots(Model& model) {
    std::map<std::string, TensorSlot> slots;
    const auto add = [&](const std::string& name, Vector& storage, ad::Shape shape) {
        if (!slots.emplace(name, TensorSlot{&storage, std::move(shape)}).second) {
            throw CheckpointError("duplicate tensor name '" + name + "'");
        }
    };
    model.visit_params(add);
    model.visit_state(add);
    add("input_mean", model.input_mean, ad::Shape{model.input_mean.size()});
    add("input_std", model.input_std, ad::Shape{model.input_std.size()});
    return slots;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    out << "fidgp-checkpoint 1\n";
    out << "config-begin\n" << config_to_text(cfg) << "config-end\n";
    for (const auto& [name, slot] : collect_slots(model)) {
        write_tensor(out, name, *slot.data, slot.shape);
    }
    out << "end\n";
    if (!out) throw CheckpointError("write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("empty checkpoint file");
    if (line != "fidgp-checkpoint 1") {
        throw CheckpointError("unknown checkpoint schema: '" + line + "'");
    }
    if (!std::getline(in, line) || line != "config-begin") {
        throw CheckpointError("missing config block");
    }
    std::string config_text;
    while (std::getline(in, line) && line != "config-end") config_text += line + "\n";
    if (line != "config-end") throw CheckpointError("unterminated config block");

    LoadedCheckpoint loaded;
    loaded.cfg = parse_config_text(config_text);
    Rng rng(loaded.cfg.seed);
    loaded.model = build_model_from_config(loaded.cfg, rng);

    auto slots = collect_slots(loaded.model);
    std::map<std::string, bool> filled;
    for (const auto& [name, slot] : slots) {
        (void)slot;
        filled[name] = false;
    }
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        std::istringstream ss(line);
        std::string tag, name, dtype;
        std::size_t rank = 0;
        if (!(ss >> tag >> name >> rank) || tag != "tensor") {
            throw CheckpointError("malformed tensor line: '" + line + "'");
        }
        ad::Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i) {
            if (!(ss >> shape[i])) throw CheckpointError("malformed shape for '" + name + "'");
        }
        std::string payload;
        if (!(ss >> dtype >> payload) || dtype != "f64") {
            throw CheckpointError("unsupported dtype for '" + name + "'");
        }
        const auto it = slots.find(name);
        if (it == slots.end()) throw CheckpointError("unknown tensor '" + name + "'");
        if (shape != it->second.shape) {
            throw CheckpointError("shape mismatch for '" + name + "'");
        }
        Vector values = decode_base64(payload);
        if (values.size() != it->second.data->size()) {
            throw CheckpointError("size mismatch for '" + name + "'");
        }
        *it->second.data = std::move(values);
        filled[name] = true;
    }
    if (!saw_end) throw CheckpointError("checkpoint truncated (missing end marker)");
    for (const auto& [name, ok] : filled) {
        if (!ok) throw CheckpointError("checkpoint missing tensor '" + name + "'");
    }
    return loaded;
}

}  // namespace fidgp
