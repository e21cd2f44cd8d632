#pragma once

// Checkpoint container: magic, little-endian u64 header length, JSON
// header (config + array name/shape/offset table), then a flat payload of
// raw little-endian doubles.  Arrays are written in model parameter order,
// keys are emitted sorted, so save(load(f)) reproduces f byte for byte.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "enclab/encoder.hpp"
#include "enclab/errors.hpp"

namespace enclab {

inline constexpr char kCheckpointMagic[8] = {'E', 'N', 'C', 'L', 'A', 'B', 'C', 'K'};

inline nlohmann::json config_to_json(const EncoderConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size},
            {"d_model", cfg.d_model},
            {"n_layers", cfg.n_layers},
            {"max_seq_len", cfg.max_seq_len},
            {"short_conv_width", cfg.short_conv_width},
            {"monarch_b", cfg.monarch_b},
            {"mlm_mask_prob", cfg.mlm_mask_prob},
            {"pad_id", cfg.pad_id},
            {"seed", cfg.seed}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.short_conv_width = j.at("short_conv_width").get<int>();
    cfg.monarch_b = j.at("monarch_b").get<int>();
    cfg.mlm_mask_prob = j.at("mlm_mask_prob").get<double>();
    cfg.pad_id = j.at("pad_id").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

inline void save_checkpoint(EncoderModel& model, const std::string& path) {
    auto named = model.named_params();
    nlohmann::json header;
    header["version"] = 1;
    header["config"] = config_to_json(model.config());
    nlohmann::json arrays = nlohmann::json::array();
    std::uint64_t offset = 0;  // in doubles
    for (auto& [name, arr] : named) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = arr.shape();
        entry["offset"] = offset;
        offset += arr.size();
        arrays.push_back(entry);
    }
    header["arrays"] = arrays;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::uint64_t hlen = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (auto& [name, arr] : named) {
        const auto& v = arr.values();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

inline EncoderModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    char lenbuf[8];
    in.read(lenbuf, 8);
    if (!in) throw DataError("checkpoint: truncated header length");
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }
    EncoderModel model(config_from_json(header.at("config")));
    auto named = model.named_params();
    const auto& arrays = header.at("arrays");
    if (arrays.size() != named.size())
        throw DataError("checkpoint: array count mismatch in " + path);
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, arr] = named[i];
        const auto& entry = arrays[i];
        if (entry.at("name").get<std::string>() != name)
            throw DataError("checkpoint: unexpected array '" +
                            entry.at("name").get<std::string>() + "', wanted '" + name + "'");
        auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != arr.shape())
            throw DataError("checkpoint: shape mismatch for " + name);
        auto& v = arr.values();
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw DataError("checkpoint: truncated payload at " + name);
    }
    return model;
}

}  // namespace enclab
