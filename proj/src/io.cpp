#include "lotmerge/io.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lotmerge {

namespace {

// ---------------------------------------------------------------------------
// canonical JSON

void escape_into(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '"';
}

void dump_into(std::string& out, const nlohmann::json& j, int depth) {
    const std::string pad(2 * static_cast<std::size_t>(depth), ' ');
    const std::string pad_in(2 * static_cast<std::size_t>(depth + 1), ' ');
    switch (j.type()) {
        case nlohmann::json::value_t::null: out += "null"; break;
        case nlohmann::json::value_t::boolean: out += j.get<bool>() ? "true" : "false"; break;
        case nlohmann::json::value_t::number_integer:
            out += std::to_string(j.get<std::int64_t>());
            break;
        case nlohmann::json::value_t::number_unsigned:
            out += std::to_string(j.get<std::uint64_t>());
            break;
        case nlohmann::json::value_t::number_float: {
            double v = j.get<double>();
            if (!std::isfinite(v)) throw ArgumentError("canonical_dump: non-finite number");
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out += buf;
            break;
        }
        case nlohmann::json::value_t::string: escape_into(out, j.get<std::string>()); break;
        case nlohmann::json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                break;
            }
            out += "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                out += pad_in;
                dump_into(out, j[i], depth + 1);
                if (i + 1 < j.size()) out += ',';
                out += '\n';
            }
            out += pad + "]";
            break;
        }
        case nlohmann::json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                break;
            }
            // nlohmann::json objects iterate in sorted key order already.
            out += "{\n";
            std::size_t i = 0;
            for (auto it = j.begin(); it != j.end(); ++it, ++i) {
                out += pad_in;
                escape_into(out, it.key());
                out += ": ";
                dump_into(out, it.value(), depth + 1);
                if (i + 1 < j.size()) out += ',';
                out += '\n';
            }
            out += pad + "}";
            break;
        }
        default: throw ArgumentError("canonical_dump: unsupported value type");
    }
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4)

constexpr std::array<std::uint32_t, 64> kSha256K = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

void sha256_block(std::array<std::uint32_t, 8>& h, const unsigned char* p) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
        w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
               (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 64; ++i) {
        std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
        std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, hh] = h;
    for (int i = 0; i < 64; ++i) {
        std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
        std::uint32_t ch = (e & f) ^ (~e & g);
        std::uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
        std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
        std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
        std::uint32_t t2 = s0 + maj;
        hh = g; g = f; f = e; e = d + t1;
        d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
}

// ---------------------------------------------------------------------------
// blob IO

std::string blob_bytes(const Matrix& m) {
    std::string bytes(static_cast<std::size_t>(m.size()) * 8, '\0');
    std::size_t off = 0;
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            std::uint64_t bits;
            double v = m(r, c);
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) bytes[off++] = char((bits >> (8 * b)) & 0xff);
        }
    }
    return bytes;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(FormatError::Code::MissingFile, "cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Matrix matrix_from_blob(const std::string& bytes, Index rows, Index cols,
                        const std::string& what) {
    if (bytes.size() % 8 != 0) {
        throw FormatError(FormatError::Code::TruncatedBlob,
                          what + ": blob size " + std::to_string(bytes.size()) +
                              " is not a multiple of 8");
    }
    const std::size_t count = bytes.size() / 8;
    if (count != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        std::ostringstream msg;
        msg << what << ": blob holds " << count << " values, manifest shape is " << rows << "x"
            << cols;
        throw FormatError(FormatError::Code::ShapeMismatch, msg.str());
    }
    Matrix m(rows, cols);
    std::size_t off = 0;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= std::uint64_t(static_cast<unsigned char>(bytes[off + std::size_t(b)]))
                        << (8 * b);
            off += 8;
            double v;
            std::memcpy(&v, &bits, 8);
            m(r, c) = v;
        }
    }
    return m;
}

nlohmann::json unit_to_json(const Unit& u) {
    nlohmann::json j;
    j["unit_id"] = u.id;
    j["kind"] = to_string(u.kind);
    j["shape"] = {u.rows, u.cols};
    if (u.kind == UnitKind::Activation) j["activation"] = to_string(u.activation);
    if (u.kind == UnitKind::Residual) j["from"] = u.residual_from;
    if (u.has_params()) j["dtype"] = "f64";
    return j;
}

Unit unit_from_json(const nlohmann::json& j) {
    Unit u;
    u.id = j.at("unit_id").get<std::string>();
    u.kind = unit_kind_from_string(j.at("kind").get<std::string>());
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          "unit '" + u.id + "': shape must be [rows, cols]");
    }
    u.rows = shape[0].get<Index>();
    u.cols = shape[1].get<Index>();
    if (u.kind == UnitKind::Activation)
        u.activation = activation_from_string(j.at("activation").get<std::string>());
    if (u.kind == UnitKind::Residual) u.residual_from = j.value("from", std::string());
    return u;
}

nlohmann::json load_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) {
        throw FormatError(FormatError::Code::MissingFile, "missing manifest: " + path.string());
    }
    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          "unparseable manifest: " + path.string());
    }
    return j;
}

NetworkSpec spec_from_manifest(const nlohmann::json& manifest, const std::string& what) {
    if (!manifest.contains("spec") || !manifest.contains("spec_hash")) {
        throw FormatError(FormatError::Code::MalformedManifest, what + ": missing spec fields");
    }
    NetworkSpec spec;
    try {
        spec = spec_from_json(manifest["spec"]);
        spec.validate();
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(FormatError::Code::MalformedManifest, what + ": " + e.what());
    }
    const auto stored = manifest["spec_hash"].get<std::string>();
    if (stored != spec_hash_of(spec)) {
        throw FormatError(FormatError::Code::HashMismatch,
                          what + ": spec_hash does not match the spec");
    }
    return spec;
}

// Reads one "params" entry: validates the declared shape and loads the blob.
Matrix load_param_blob(const std::filesystem::path& dir, const nlohmann::json& entry,
                       const std::string& what) {
    const auto id = entry.at("unit_id").get<std::string>();
    const auto& shape = entry.at("shape");
    const Index rows = shape.at(0).get<Index>();
    const Index cols = shape.at(1).get<Index>();
    const auto blob = entry.at("blob").get<std::string>();
    if (blob.find('/') != std::string::npos || blob.find("..") != std::string::npos) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          what + ": blob name '" + blob + "' escapes the directory");
    }
    Matrix m = matrix_from_blob(read_file_bytes(dir / blob), rows, cols, what + " '" + id + "'");
    require_finite(m, what + " '" + id + "'");
    return m;
}

void check_format_version(const nlohmann::json& manifest, const std::string& what) {
    if (manifest.value("format_version", -1) != 1) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          what + ": unsupported format_version");
    }
}

void check_artifact_kind(const nlohmann::json& manifest, const std::string& expected) {
    const auto got = manifest.value("artifact_kind", std::string());
    if (got != expected) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          "expected artifact_kind '" + expected + "', found '" + got + "'");
    }
}

void write_blob(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    const std::string bytes = blob_bytes(m);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::string canonical_dump(const nlohmann::json& j) {
    std::string out;
    dump_into(out, j, 0);
    out += '\n';
    return out;
}

std::string sha256_hex(std::string_view bytes) {
    std::array<std::uint32_t, 8> h = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                      0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t n = bytes.size();
    std::size_t i = 0;
    for (; i + 64 <= n; i += 64) sha256_block(h, data + i);

    unsigned char tail[128] = {0};
    std::size_t rem = n - i;
    std::memcpy(tail, data + i, rem);
    tail[rem] = 0x80;
    std::size_t tail_len = (rem < 56) ? 64 : 128;
    std::uint64_t bit_len = std::uint64_t(n) * 8;
    for (int b = 0; b < 8; ++b) tail[tail_len - 1 - std::size_t(b)] = (bit_len >> (8 * b)) & 0xff;
    sha256_block(h, tail);
    if (tail_len == 128) sha256_block(h, tail + 64);

    std::string hex;
    hex.reserve(64);
    for (std::uint32_t word : h) {
        char buf[9];
        std::snprintf(buf, sizeof buf, "%08x", word);
        hex += buf;
    }
    return hex;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : spec.units) units.push_back(unit_to_json(u));
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : spec.heads) heads.push_back(unit_to_json(h));
    return {{"input_dim", spec.input_dim}, {"units", units}, {"heads", heads}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.input_dim = j.at("input_dim").get<Index>();
    for (const auto& ju : j.at("units")) spec.units.push_back(unit_from_json(ju));
    for (const auto& jh : j.value("heads", nlohmann::json::array()))
        spec.heads.push_back(unit_from_json(jh));
    return spec;
}

std::string spec_hash_of(const NetworkSpec& spec) {
    return sha256_hex(canonical_dump(spec_to_json(spec)));
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// ---------------------------------------------------------------------------
// checkpoints / task vectors

namespace {

void save_params_dir(const std::filesystem::path& dir, const std::string& artifact_kind,
                     const NetworkSpec& spec, const std::string& hash,
                     const std::map<std::string, Matrix>& params,
                     const std::map<std::string, const Unit*>& units_by_id) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [id, m] : params) {
        const Unit* u = units_by_id.at(id);
        entries.push_back({{"unit_id", id},
                           {"kind", to_string(u->kind)},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "f64"},
                           {"blob", id + ".bin"}});
        write_blob(dir / (id + ".bin"), m);
    }
    nlohmann::json manifest = {{"artifact_kind", artifact_kind},
                               {"format_version", 1},
                               {"spec", spec_to_json(spec)},
                               {"spec_hash", hash},
                               {"params", entries}};
    write_text_file(dir / "manifest.json", canonical_dump(manifest));
}

std::map<std::string, const Unit*> index_units(const NetworkSpec& spec) {
    std::map<std::string, const Unit*> by_id;
    for (const auto& u : spec.units) by_id[u.id] = &u;
    for (const auto& h : spec.heads) by_id[h.id] = &h;
    return by_id;
}

// Routes nlohmann type/access errors on manifest fields into FormatError.
template <typename Fn>
auto with_manifest_errors(const char* what, Fn&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          std::string(what) + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    save_params_dir(dir, "checkpoint", ckpt.spec, ckpt.spec_hash, ckpt.params,
                    index_units(ckpt.spec));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    return with_manifest_errors("checkpoint", [&] {
        check_artifact_kind(manifest, "checkpoint");
        check_format_version(manifest, "checkpoint");
        NetworkSpec spec = spec_from_manifest(manifest, "checkpoint");
        std::map<std::string, Matrix> params;
        for (const auto& entry : manifest.at("params")) {
            params[entry.at("unit_id").get<std::string>()] =
                load_param_blob(dir, entry, "checkpoint parameter");
        }
        try {
            return make_checkpoint(std::move(spec), std::move(params));
        } catch (const ShapeError& e) {
            throw FormatError(FormatError::Code::ShapeMismatch, e.what());
        } catch (const ArgumentError& e) {
            throw FormatError(FormatError::Code::MalformedManifest, e.what());
        }
    });
}

void save_task_vector(const TaskVector& tv, const std::filesystem::path& dir) {
    save_params_dir(dir, "task_vector", tv.spec, tv.spec_hash, tv.deltas, index_units(tv.spec));
}

TaskVector load_task_vector(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    return with_manifest_errors("task_vector", [&] {
        check_artifact_kind(manifest, "task_vector");
        check_format_version(manifest, "task_vector");
        NetworkSpec spec = spec_from_manifest(manifest, "task_vector");
        std::map<std::string, Matrix> deltas;
        for (const auto& entry : manifest.at("params")) {
            deltas[entry.at("unit_id").get<std::string>()] =
                load_param_blob(dir, entry, "task vector delta");
        }
        try {
            return make_task_vector(std::move(spec), std::move(deltas));
        } catch (const ShapeError& e) {
            throw FormatError(FormatError::Code::ShapeMismatch, e.what());
        } catch (const ArgumentError& e) {
            throw FormatError(FormatError::Code::MalformedManifest, e.what());
        }
    });
}

// ---------------------------------------------------------------------------
// exemplars

void save_exemplars(const ExemplarSet& ex, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {{"artifact_kind", "exemplars"},
                               {"format_version", 1},
                               {"task_id", ex.task_id},
                               {"n_samples", ex.features.rows()},
                               {"input_dim", ex.features.cols()},
                               {"has_labels", ex.labels.has_value()}};
    if (ex.labels) {
        manifest["num_classes"] = ex.num_classes;
        std::string bytes(ex.labels->size() * 4, '\0');
        for (std::size_t i = 0; i < ex.labels->size(); ++i) {
            std::uint32_t v = (*ex.labels)[i];
            for (int b = 0; b < 4; ++b) bytes[4 * i + std::size_t(b)] = char((v >> (8 * b)) & 0xff);
        }
        write_text_file(dir / "labels.bin", bytes);
    }
    write_blob(dir / "features.bin", ex.features);
    write_text_file(dir / "manifest.json", canonical_dump(manifest));
}

ExemplarSet load_exemplars(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    return with_manifest_errors("exemplars", [&] {
    check_artifact_kind(manifest, "exemplars");
    check_format_version(manifest, "exemplars");
    ExemplarSet ex;
    ex.task_id = manifest.at("task_id").get<std::string>();
    const Index n = manifest.at("n_samples").get<Index>();
    const Index d = manifest.at("input_dim").get<Index>();
    if (n < 1 || d < 1) {
        throw FormatError(FormatError::Code::MalformedManifest,
                          "exemplars: n_samples and input_dim must be positive");
    }
    ex.features = matrix_from_blob(read_file_bytes(dir / "features.bin"), n, d, "exemplar features");
    require_finite(ex.features, "exemplar features");
    if (manifest.value("has_labels", false)) {
        ex.num_classes = manifest.at("num_classes").get<int>();
        const std::string bytes = read_file_bytes(dir / "labels.bin");
        if (bytes.size() % 4 != 0) {
            throw FormatError(FormatError::Code::TruncatedBlob, "exemplar labels truncated");
        }
        if (bytes.size() / 4 != static_cast<std::size_t>(n)) {
            throw FormatError(FormatError::Code::ShapeMismatch,
                              "exemplar labels do not match n_samples");
        }
        std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::uint32_t v = 0;
            for (int b = 0; b < 4; ++b)
                v |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + std::size_t(b)]))
                     << (8 * b);
            labels[i] = v;
            if (ex.num_classes > 0 && v >= std::uint32_t(ex.num_classes)) {
                throw FormatError(FormatError::Code::BadValue,
                                  "exemplar label out of range: " + std::to_string(v));
            }
        }
        ex.labels = std::move(labels);
    }
    return ex;
    });
}

// ---------------------------------------------------------------------------
// layer statistics

void save_layer_stats(const LayerStats& stats, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    auto add = [&](const std::string& unit_id, UnitKind kind, const std::string& stat_kind,
                   const Matrix& m) {
        const std::string blob = unit_id + "." + stat_kind + ".bin";
        entries.push_back({{"unit_id", unit_id},
                           {"kind", to_string(kind)},
                           {"stat_kind", stat_kind},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "f64"},
                           {"blob", blob}});
        write_blob(dir / blob, m);
    };
    for (const auto& [id, us] : stats.units) {
        switch (us.kind) {
            case UnitKind::MatMul:
                add(id, us.kind, "gram", us.gram);
                add(id, us.kind, "gram_times_delta", us.gram_delta);
                break;
            case UnitKind::Scale:
                add(id, us.kind, "sq_sums", us.sq_sums.transpose());
                add(id, us.kind, "sq_sums_times_delta", us.sq_sums_delta.transpose());
                break;
            case UnitKind::Bias:
                add(id, us.kind, "bias_delta", us.bias_delta.transpose());
                break;
            default:
                throw ArgumentError("layer stats: unexpected unit kind for '" + id + "'");
        }
    }
    nlohmann::json manifest = {{"artifact_kind", "layer_stats"},
                               {"format_version", 1},
                               {"task_id", stats.task_id},
                               {"n_samples", stats.n_samples},
                               {"spec", spec_to_json(stats.spec)},
                               {"spec_hash", stats.spec_hash},
                               {"params", entries}};
    write_text_file(dir / "manifest.json", canonical_dump(manifest));
}

LayerStats load_layer_stats(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    return with_manifest_errors("layer_stats", [&] {
    check_artifact_kind(manifest, "layer_stats");
    check_format_version(manifest, "layer_stats");
    LayerStats stats;
    stats.spec = spec_from_manifest(manifest, "layer_stats");
    stats.spec_hash = manifest.at("spec_hash").get<std::string>();
    stats.task_id = manifest.at("task_id").get<std::string>();
    stats.n_samples = manifest.at("n_samples").get<long>();
    for (const auto& entry : manifest.at("params")) {
        const auto id = entry.at("unit_id").get<std::string>();
        const auto stat_kind = entry.at("stat_kind").get<std::string>();
        Matrix m = load_param_blob(dir, entry, "layer stat");
        auto& us = stats.units[id];
        us.kind = unit_kind_from_string(entry.at("kind").get<std::string>());
        if (stat_kind == "gram") us.gram = std::move(m);
        else if (stat_kind == "gram_times_delta") us.gram_delta = std::move(m);
        else if (stat_kind == "sq_sums") us.sq_sums = m.transpose();
        else if (stat_kind == "sq_sums_times_delta") us.sq_sums_delta = m.transpose();
        else if (stat_kind == "bias_delta") us.bias_delta = m.transpose();
        else
            throw FormatError(FormatError::Code::MalformedManifest,
                              "layer stats: unknown stat_kind '" + stat_kind + "'");
    }
    return stats;
    });
}

}  // namespace lotmerge
