#pragma once

#include "cliperase/digest.hpp"
#include "cliperase/errors.hpp"
#include "cliperase/history.hpp"
#include "cliperase/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace cliperase {

// Checkpoint container:
//
//   CLIPERASE-CKPT <version>\n
//   arch <single-line JSON>\n
//   tensor <name> <rows> <cols>\n <rows*cols little-endian float32>\n     (x7, fixed order)
//   history <n>\n <n line records>
//   digest <sha256 hex of every preceding byte>\n
//
// The digest makes any payload corruption or truncation a LoadError.

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json arch_to_json(const ArchConfig& a) {
    return {{"d_img", a.d_img},         {"hidden", a.hidden},       {"d_emb", a.d_emb},
            {"vocab_size", a.vocab_size}, {"max_len", a.max_len},   {"d_tok", a.d_tok},
            {"activation", std::string(to_string(a.activation))},   {"temperature", a.temperature}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "d_img") a.d_img = v.get<int>();
            else if (k == "hidden") a.hidden = v.get<int>();
            else if (k == "d_emb") a.d_emb = v.get<int>();
            else if (k == "vocab_size") a.vocab_size = v.get<int>();
            else if (k == "max_len") a.max_len = v.get<int>();
            else if (k == "d_tok") a.d_tok = v.get<int>();
            else if (k == "activation") a.activation = parse_activation(v.get<std::string>());
            else if (k == "temperature") a.temperature = v.get<double>();
            else throw ConfigError("unknown key 'model." + k + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("bad value for key 'model." + k + "'");
        }
    }
    a.validate();
    return a;
}

namespace detail {

inline void put_f32_le(std::string& out, float f) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xffu);
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(const DualEncoder<float>& model, const RunHistory* history = nullptr) {
    std::string out = "CLIPERASE-CKPT " + std::to_string(kCheckpointFormatVersion) + "\n";
    out += "arch " + arch_to_json(model.arch()).dump() + "\n";
    zip_params([&](std::string_view name, const auto& m) {
        out += "tensor " + std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
        for (Index i = 0; i < m.size(); ++i) detail::put_f32_le(out, m.data()[i]);
        out += "\n";
    }, model.params());
    const auto lines = history ? history_to_lines(*history) : std::vector<std::string>{};
    out += "history " + std::to_string(lines.size()) + "\n";
    for (const auto& l : lines) out += l + "\n";
    out += "digest " + sha256_hex(out) + "\n";
    return out;
}

struct Checkpoint {
    DualEncoder<float> model;
    std::optional<RunHistory> history;
};

inline Checkpoint parse_checkpoint(const std::string& bytes) {
    std::size_t pos = 0;
    auto line = [&](const char* what) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw LoadError(std::string("checkpoint truncated while reading ") + what);
        std::string l = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return l;
    };

    // Integrity first: nothing is interpreted from a payload whose digest fails.
    const auto dpos = bytes.rfind("digest ");
    if (bytes.rfind("CLIPERASE-CKPT ", 0) != 0) throw LoadError("not a checkpoint file (bad magic)");
    if (dpos == std::string::npos || bytes.size() < dpos + 7 + 64 + 1 || bytes.back() != '\n')
        throw LoadError("checkpoint truncated (missing digest)");
    const std::string stored = bytes.substr(dpos + 7, bytes.size() - dpos - 8);
    if (stored != sha256_hex(std::string_view(bytes).substr(0, dpos)))
        throw LoadError("checkpoint digest mismatch (corrupted payload)");

    const std::string header = line("header");
    const int version = std::atoi(header.c_str() + std::strlen("CLIPERASE-CKPT "));
    if (version != kCheckpointFormatVersion)
        throw FormatVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointFormatVersion) + ")");

    const std::string arch_line = line("arch");
    if (arch_line.rfind("arch ", 0) != 0) throw LoadError("missing arch record");
    ArchConfig arch;
    try {
        arch = arch_from_json(nlohmann::json::parse(arch_line.substr(5)));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("bad arch record: ") + e.what());
    } catch (const ConfigError& e) {
        throw LoadError(std::string("bad arch record: ") + e.what());
    }

    auto params = EncoderParams<float>::zeros(arch);
    zip_params([&](std::string_view name, auto& m) {
        const std::string expect =
            "tensor " + std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols());
        if (line("tensor header") != expect) throw LoadError("tensor record mismatch, expected '" + expect + "'");
        const std::size_t nbytes = static_cast<std::size_t>(m.size()) * 4;
        if (pos + nbytes + 1 > dpos) throw LoadError("tensor payload truncated");
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::get_f32_le(p + 4 * i);
        pos += nbytes;
        if (bytes[pos] != '\n') throw LoadError("tensor payload length mismatch");
        ++pos;
    }, params);

    const std::string hist = line("history");
    if (hist.rfind("history ", 0) != 0) throw LoadError("missing history record");
    const long n = std::atol(hist.c_str() + 8);
    std::vector<std::string> lines;
    for (long i = 0; i < n; ++i) lines.push_back(line("history record"));
    if (pos != dpos) throw LoadError("unexpected data before digest");

    Checkpoint ck{DualEncoder<float>(arch, std::move(params)), std::nullopt};
    if (n > 0) {
        try {
            ck.history = history_from_lines(lines);
        } catch (const ParseError& e) {
            throw LoadError(std::string("bad history: ") + e.what());
        }
    }
    return ck;
}

/// Writes to a sibling temp file and renames, so readers never see a partial file.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

inline void save_checkpoint(const DualEncoder<float>& model, const RunHistory* history, const std::string& path) {
    write_file_atomic(path, serialize_checkpoint(model, history));
}

inline void save_checkpoint(const DualEncoder<float>& model, const RunHistory& history, const std::string& path) {
    save_checkpoint(model, &history, path);
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file_bytes(path)); }

}  // namespace cliperase
