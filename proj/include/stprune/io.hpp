#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stprune/error.hpp"
#include "stprune/model.hpp"

namespace stprune {

// Binary model container (.stm): magic "STM1", u32 little-endian header
// length, UTF-8 JSON header, then raw little-endian f32 tensor payloads,
// row-major, in table order. Calibration sets (.stc) use magic "STC1" with
// a {m, b, n, lengths} header followed by m*b*n f32 values.

namespace detail {

inline void append_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_f32_le(std::string& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    append_u32_le(out, u);
}

inline float read_f32_le(const unsigned char* p) {
    const std::uint32_t u = read_u32_le(p);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline std::string printable_magic(std::string_view got) {
    std::string s;
    for (unsigned char c : got) {
        if (c >= 0x20 && c < 0x7f) {
            s.push_back(static_cast<char>(c));
        } else {
            static const char* hex = "0123456789abcdef";
            s += "\\x";
            s.push_back(hex[c >> 4]);
            s.push_back(hex[c & 0xf]);
        }
    }
    return s;
}

struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    const Matrix* mat = nullptr;              // 2-d payload
    const std::vector<double>* vec = nullptr;  // 1-d payload

    std::size_t count() const {
        std::size_t c = 1;
        for (std::size_t d : shape) c *= d;
        return c;
    }
};

inline std::vector<TensorRef> model_tensor_table(const TransformerModel& m) {
    std::vector<TensorRef> t;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& blk = m.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const std::size_t hd = blk.attn.proj_width();
        auto mat = [&](const std::string& name, const Matrix& mm,
                       std::size_t r, std::size_t c) {
            t.push_back({name, {r, c}, &mm, nullptr});
        };
        auto vec = [&](const std::string& name, const std::vector<double>& v) {
            t.push_back({name, {v.size()}, nullptr, &v});
        };
        mat(p + "attn.wq", blk.attn.wq, m.width, hd);
        vec(p + "attn.bq", blk.attn.bq);
        mat(p + "attn.wk", blk.attn.wk, m.width, hd);
        vec(p + "attn.bk", blk.attn.bk);
        mat(p + "attn.wv", blk.attn.wv, m.width, hd);
        vec(p + "attn.bv", blk.attn.bv);
        mat(p + "attn.wo", blk.attn.wo, hd, m.width);
        vec(p + "attn.bo", blk.attn.bo);
        vec(p + "norm1.gain", blk.norm1.gain);
        vec(p + "norm1.bias", blk.norm1.bias);
        mat(p + "ffn.w1", blk.ffn.w1, m.width, blk.ffn.hidden_width());
        vec(p + "ffn.b1", blk.ffn.b1);
        mat(p + "ffn.w2", blk.ffn.w2, blk.ffn.hidden_width(), m.width);
        vec(p + "ffn.b2", blk.ffn.b2);
        vec(p + "norm2.gain", blk.norm2.gain);
        vec(p + "norm2.bias", blk.norm2.bias);
    }
    if (m.head) {
        t.push_back({"head.w", {m.width, m.head->w.cols()}, &m.head->w, nullptr});
        t.push_back({"head.b", {m.head->b.size()}, nullptr, &m.head->b});
    }
    return t;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write: " + path);
}

}  // namespace detail

inline std::string model_to_bytes(const TransformerModel& m) {
    validate_model(m);
    const auto table = detail::model_tensor_table(m);

    nlohmann::json header;
    header["version"] = 1;
    header["n"] = m.width;
    header["norm_placement"] = m.norm_placement == NormPlacement::pre ? "pre" : "post";
    header["norm_kind"] = m.norm_kind == NormKind::rmsnorm ? "rmsnorm" : "layernorm";
    if (m.head) header["classes"] = m.head->w.cols();
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& blk : m.layers) {
        layers.push_back({{"h", blk.attn.heads},
                          {"d_h", blk.attn.head_dim},
                          {"f", blk.ffn.hidden_width()},
                          {"activation",
                           blk.ffn.activation == Activation::relu ? "relu" : "gelu"}});
    }
    header["layers"] = layers;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : table) {
        tensors.push_back(
            {{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}});
        offset += 4 * t.count();
    }
    header["tensors"] = tensors;

    const std::string hjson = header.dump();
    std::string out = "STM1";
    detail::append_u32_le(out, static_cast<std::uint32_t>(hjson.size()));
    out += hjson;
    out.reserve(out.size() + offset);
    for (const auto& t : table) {
        if (t.mat) {
            for (std::size_t i = 0; i < t.mat->size(); ++i)
                detail::append_f32_le(out, static_cast<float>(t.mat->data()[i]));
        } else {
            for (double v : *t.vec) detail::append_f32_le(out, static_cast<float>(v));
        }
    }
    return out;
}

inline TransformerModel model_from_bytes(std::string_view bytes) {
    if (bytes.size() < 8) throw FormatError("model file too short for magic and header length");
    if (bytes.substr(0, 4) != "STM1")
        throw FormatError("bad magic: expected \"STM1\", got \"" +
                          detail::printable_magic(bytes.substr(0, 4)) + "\"");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t hlen = detail::read_u32_le(u + 4);
    if (8 + static_cast<std::size_t>(hlen) > bytes.size())
        throw FormatError("truncated header: declared length " + std::to_string(hlen) +
                          " exceeds file size");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header JSON: ") + e.what());
    }

    constexpr std::size_t kDimCap = 1u << 20;  // reject implausible headers early

    TransformerModel m;
    try {
        if (header.at("version").get<int>() != 1)
            throw FormatError("unsupported version " + header.at("version").dump());
        m.width = header.at("n").get<std::size_t>();
        if (m.width == 0 || m.width > kDimCap)
            throw FormatError("implausible hidden width " + std::to_string(m.width));
        if (header.at("layers").size() > 65536) throw FormatError("implausible layer count");
        const std::string np = header.at("norm_placement").get<std::string>();
        if (np != "pre" && np != "post") throw FormatError("bad norm_placement: " + np);
        m.norm_placement = np == "pre" ? NormPlacement::pre : NormPlacement::post;
        const std::string nk = header.at("norm_kind").get<std::string>();
        if (nk != "layernorm" && nk != "rmsnorm") throw FormatError("bad norm_kind: " + nk);
        m.norm_kind = nk == "rmsnorm" ? NormKind::rmsnorm : NormKind::layernorm;
        for (const auto& lj : header.at("layers")) {
            TransformerBlock blk;
            blk.attn.heads = lj.at("h").get<std::size_t>();
            blk.attn.head_dim = lj.at("d_h").get<std::size_t>();
            const std::size_t f = lj.at("f").get<std::size_t>();
            const std::string act = lj.at("activation").get<std::string>();
            if (act != "relu" && act != "gelu") throw FormatError("bad activation: " + act);
            blk.ffn.activation = act == "relu" ? Activation::relu : Activation::gelu;
            if (blk.attn.heads == 0 || blk.attn.head_dim == 0 || f == 0 ||
                blk.attn.heads > kDimCap || blk.attn.head_dim > kDimCap || f > kDimCap ||
                blk.attn.heads * blk.attn.head_dim > kDimCap)
                throw FormatError("implausible layer dimensions");
            const std::size_t hd = blk.attn.proj_width();
            blk.attn.wq = Matrix(m.width, hd);
            blk.attn.wk = Matrix(m.width, hd);
            blk.attn.wv = Matrix(m.width, hd);
            blk.attn.wo = Matrix(hd, m.width);
            blk.attn.bq.resize(hd);
            blk.attn.bk.resize(hd);
            blk.attn.bv.resize(hd);
            blk.attn.bo.resize(m.width);
            blk.norm1.gain.resize(m.width);
            blk.norm1.bias.resize(m.width);
            blk.norm2.gain.resize(m.width);
            blk.norm2.bias.resize(m.width);
            blk.ffn.w1 = Matrix(m.width, f);
            blk.ffn.w2 = Matrix(f, m.width);
            blk.ffn.b1.resize(f);
            blk.ffn.b2.resize(m.width);
            m.layers.push_back(std::move(blk));
        }
        if (header.contains("classes")) {
            Classifier h;
            const std::size_t c = header.at("classes").get<std::size_t>();
            if (c == 0 || c > kDimCap) throw FormatError("implausible class count");
            h.w = Matrix(m.width, c);
            h.b.resize(c);
            m.head = std::move(h);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("header field error: ") + e.what());
    }

    const auto table = detail::model_tensor_table(m);
    const std::size_t payload0 = 8 + hlen;
    const std::size_t payload_size = bytes.size() - payload0;

    nlohmann::json tensors;
    try {
        tensors = header.at("tensors");
        if (tensors.size() != table.size())
            throw FormatError("tensor table has " + std::to_string(tensors.size()) +
                              " entries, expected " + std::to_string(table.size()));
        for (std::size_t i = 0; i < table.size(); ++i) {
            const auto& tj = tensors[i];
            const auto& exp = table[i];
            if (tj.at("name").get<std::string>() != exp.name)
                throw FormatError("tensor " + std::to_string(i) + " named '" +
                                  tj.at("name").get<std::string>() + "', expected '" +
                                  exp.name + "'");
            if (tj.at("dtype").get<std::string>() != "f32")
                throw FormatError("tensor '" + exp.name + "' has unsupported dtype");
            const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
            if (shape != exp.shape)
                throw FormatError("tensor '" + exp.name + "' shape mismatch");
            const std::size_t off = tj.at("offset").get<std::size_t>();
            if (off + 4 * exp.count() > payload_size)
                throw FormatError("tensor table entry '" + exp.name +
                                  "' points past end of file");
            const unsigned char* src = u + payload0 + off;
            auto read_into = [&](double* dst, std::size_t cnt) {
                for (std::size_t j = 0; j < cnt; ++j) {
                    const float f = detail::read_f32_le(src + 4 * j);
                    if (!std::isfinite(f))
                        throw FormatError("tensor '" + exp.name + "' has non-finite values");
                    dst[j] = static_cast<double>(f);
                }
            };
            if (exp.mat)
                read_into(const_cast<Matrix*>(exp.mat)->data(), exp.count());
            else
                read_into(const_cast<std::vector<double>*>(exp.vec)->data(), exp.count());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("tensor table error: ") + e.what());
    }

    validate_model(m);
    return m;
}

inline std::string calib_to_bytes(const CalibrationSet& c) {
    validate_calib(c);
    nlohmann::json header;
    header["m"] = c.examples();
    header["b"] = c.seq_len;
    header["n"] = c.values.cols();
    header["lengths"] = c.lengths;
    const std::string hjson = header.dump();
    std::string out = "STC1";
    detail::append_u32_le(out, static_cast<std::uint32_t>(hjson.size()));
    out += hjson;
    out.reserve(out.size() + 4 * c.values.size());
    for (std::size_t i = 0; i < c.values.size(); ++i)
        detail::append_f32_le(out, static_cast<float>(c.values.data()[i]));
    return out;
}

inline CalibrationSet calib_from_bytes(std::string_view bytes) {
    if (bytes.size() < 8) throw FormatError("calibration file too short");
    if (bytes.substr(0, 4) != "STC1")
        throw FormatError("bad magic: expected \"STC1\", got \"" +
                          detail::printable_magic(bytes.substr(0, 4)) + "\"");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t hlen = detail::read_u32_le(u + 4);
    if (8 + static_cast<std::size_t>(hlen) > bytes.size())
        throw FormatError("truncated header: declared length " + std::to_string(hlen) +
                          " exceeds file size");
    CalibrationSet c;
    std::size_t n = 0, m = 0;
    try {
        const nlohmann::json header = nlohmann::json::parse(bytes.substr(8, hlen));
        m = header.at("m").get<std::size_t>();
        c.seq_len = header.at("b").get<std::size_t>();
        n = header.at("n").get<std::size_t>();
        c.lengths = header.at("lengths").get<std::vector<std::size_t>>();
        if (c.lengths.size() != m)
            throw FormatError("lengths array has " + std::to_string(c.lengths.size()) +
                              " entries, expected m = " + std::to_string(m));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed calibration header: ") + e.what());
    }
    const std::size_t payload0 = 8 + hlen;
    const std::size_t max_count = (bytes.size() - payload0) / 4;
    if (m == 0 || c.seq_len == 0 || n == 0 || m > max_count ||
        c.seq_len > max_count / m || n > max_count / (m * c.seq_len))
        throw FormatError("calibration payload truncated: header claims more values than "
                          "the file holds");
    const std::size_t count = m * c.seq_len * n;
    c.values = Matrix(m * c.seq_len, n);
    for (std::size_t i = 0; i < count; ++i) {
        const float f = detail::read_f32_le(u + payload0 + 4 * i);
        if (!std::isfinite(f)) throw FormatError("calibration has non-finite values");
        c.values.data()[i] = static_cast<double>(f);
    }
    validate_calib(c);
    return c;
}

inline void save_model(const TransformerModel& m, const std::string& path) {
    detail::write_file_bytes(path, model_to_bytes(m));
}

inline TransformerModel load_model(const std::string& path) {
    return model_from_bytes(detail::read_file_bytes(path));
}

inline void save_calib(const CalibrationSet& c, const std::string& path) {
    detail::write_file_bytes(path, calib_to_bytes(c));
}

inline CalibrationSet load_calib(const std::string& path) {
    return calib_from_bytes(detail::read_file_bytes(path));
}

}  // namespace stprune
