#include "fitq/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fitq {

using nlohmann::json;

// ---- base64 -----------------------------------------------------------------

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const unsigned char* data, size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        uint32_t v = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < len) v |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) v |= static_cast<uint32_t>(data[i + 2]);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64[v & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
    if (s.size() % 4 != 0) throw ValidationError("base64: length not a multiple of 4");
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw ValidationError("base64: invalid character");
    };
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (size_t i = 0; i < s.size(); i += 4) {
        const int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]), d = val(s[i + 3]);
        if (a < 0 || b < 0) throw ValidationError("base64: malformed padding");
        const uint32_t v = (static_cast<uint32_t>(a) << 18) | (static_cast<uint32_t>(b) << 12) |
                           (c < 0 ? 0u : static_cast<uint32_t>(c) << 6) | (d < 0 ? 0u : static_cast<uint32_t>(d));
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        if (c >= 0) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
        if (d >= 0) out.push_back(static_cast<unsigned char>(v & 0xff));
    }
    return out;
}

std::string encode_doubles(const std::vector<double>& v) {
    std::vector<unsigned char> bytes(v.size() * 8);
    for (size_t i = 0; i < v.size(); ++i) {
        uint64_t bits;
        std::memcpy(&bits, &v[i], 8);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
    }
    return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> decode_doubles(const std::string& s) {
    std::vector<unsigned char> bytes = base64_decode(s);
    if (bytes.size() % 8 != 0) throw ValidationError("decode_doubles: byte count not a multiple of 8");
    std::vector<double> out(bytes.size() / 8);
    for (size_t i = 0; i < out.size(); ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(bytes[i * 8 + static_cast<size_t>(b)]) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

// ---- sha256 (FIPS 180-4) ----------------------------------------------------

namespace {

struct Sha256 {
    uint32_t h[8] = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                     0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    unsigned char buf[64];
    uint64_t total = 0;
    size_t fill = 0;

    static uint32_t rotr(uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void process(const unsigned char* p) {
        static const uint32_t K[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
            0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
            0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
            0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (static_cast<uint32_t>(p[4 * i]) << 24) | (static_cast<uint32_t>(p[4 * i + 1]) << 16) |
                   (static_cast<uint32_t>(p[4 * i + 2]) << 8) | static_cast<uint32_t>(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            const uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const uint32_t ch = (e & f) ^ (~e & g);
            const uint32_t t1 = hh + S1 + ch + K[i] + w[i];
            const uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const uint32_t t2 = S0 + maj;
            hh = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    void update(const unsigned char* p, size_t len) {
        total += len;
        while (len) {
            const size_t take = std::min(len, 64 - fill);
            std::memcpy(buf + fill, p, take);
            fill += take;
            p += take;
            len -= take;
            if (fill == 64) {
                process(buf);
                fill = 0;
            }
        }
    }

    std::string finish() {
        const uint64_t bits = total * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        unsigned char zero = 0;
        while (fill != 56) update(&zero, 1);
        unsigned char len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (8 * (7 - i)));
        update(len_be, 8);
        static const char* hex = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (uint32_t word : h)
            for (int i = 3; i >= 0; --i) {
                const unsigned char byte = static_cast<unsigned char>(word >> (8 * i));
                out.push_back(hex[byte >> 4]);
                out.push_back(hex[byte & 15]);
            }
        return out;
    }
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    Sha256 s;
    s.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
    return s.finish();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
}

// ---- json helpers -----------------------------------------------------------

namespace {

json provenance_json(const Provenance& prov) {
    json j = json::object();
    for (const auto& [role, path] : prov.inputs) j[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
    return j;
}

json header(const char* kind, const Provenance& prov) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = kind;
    if (!prov.inputs.empty()) j["inputs"] = provenance_json(prov);
    return j;
}

json parse(const std::filesystem::path& path, const char* kind) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion)
        throw ValidationError(path.string() + ": missing or mismatched schema_version (expected " +
                              std::to_string(kSchemaVersion) + ")");
    if (!j.contains("kind") || j["kind"].get<std::string>() != kind)
        throw ValidationError(path.string() + ": expected kind '" + kind + "'");
    return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

const char* kind_of(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

LayerKind kind_from(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "maxpool") return LayerKind::maxpool;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "relu") return LayerKind::relu;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "dense") return LayerKind::dense;
    throw ValidationError("unknown layer kind '" + s + "'");
}

json tensor_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", encode_doubles(t.vec())}};
}

Tensor tensor_from(const json& j) {
    Shape shape = j.at("shape").get<Shape>();
    return Tensor(std::move(shape), decode_doubles(j.at("data").get<std::string>()));
}

}  // namespace

// ---- checkpoints ------------------------------------------------------------

struct ModelSerde {
    static json to_json(const Model& m) {
        json layers = json::array();
        for (size_t li = 0; li < m.specs_.size(); ++li) {
            const LayerSpec& s = m.specs_[li];
            json l;
            l["kind"] = kind_of(s.kind);
            l["name"] = s.name;
            switch (s.kind) {
                case LayerKind::conv:
                    l["out_channels"] = s.out_channels;
                    l["kernel"] = s.kernel;
                    l["stride"] = s.stride;
                    l["pad"] = s.pad;
                    break;
                case LayerKind::maxpool:
                    l["pool"] = s.pool;
                    l["stride"] = s.stride;
                    break;
                case LayerKind::dense:
                    l["units"] = s.units;
                    break;
                default:
                    break;
            }
            const LayerParams& p = m.params_[li];
            json params = json::object();
            if (p.W.size()) params["W"] = tensor_json(p.W);
            if (p.b.size()) params["b"] = tensor_json(p.b);
            if (p.gamma.size()) {
                params["gamma"] = tensor_json(p.gamma);
                params["beta"] = tensor_json(p.beta);
                params["run_mean"] = tensor_json(p.run_mean);
                params["run_var"] = tensor_json(p.run_var);
            }
            l["params"] = std::move(params);
            layers.push_back(std::move(l));
        }
        json j;
        j["input_shape"] = m.input_chw_;
        j["num_classes"] = m.num_classes_;
        j["layers"] = std::move(layers);
        return j;
    }

    static Model from_json(const json& j) {
        std::vector<LayerSpec> specs;
        for (const auto& l : j.at("layers")) {
            LayerSpec s;
            s.kind = kind_from(l.at("kind").get<std::string>());
            s.name = l.at("name").get<std::string>();
            switch (s.kind) {
                case LayerKind::conv:
                    s.out_channels = l.at("out_channels").get<int64_t>();
                    s.kernel = l.at("kernel").get<int64_t>();
                    s.stride = l.at("stride").get<int64_t>();
                    s.pad = l.at("pad").get<int64_t>();
                    break;
                case LayerKind::maxpool:
                    s.pool = l.at("pool").get<int64_t>();
                    s.stride = l.at("stride").get<int64_t>();
                    break;
                case LayerKind::dense:
                    s.units = l.at("units").get<int64_t>();
                    break;
                default:
                    break;
            }
            specs.push_back(std::move(s));
        }
        Model m = Model::build(specs, j.at("input_shape").get<Shape>(), j.at("num_classes").get<int64_t>(), 0);
        for (size_t li = 0; li < m.specs_.size(); ++li) {
            const json& params = j.at("layers")[li].at("params");
            LayerParams& p = m.params_[li];
            if (params.contains("W")) p.W = tensor_from(params.at("W"));
            if (params.contains("b")) p.b = tensor_from(params.at("b"));
            if (params.contains("gamma")) {
                p.gamma = tensor_from(params.at("gamma"));
                p.beta = tensor_from(params.at("beta"));
                p.run_mean = tensor_from(params.at("run_mean"));
                p.run_var = tensor_from(params.at("run_var"));
            }
        }
        return m;
    }
};

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    json j = header("checkpoint", {});
    j["model"] = ModelSerde::to_json(model);
    write_file(path, dump(j));
}

Model load_checkpoint(const std::filesystem::path& path) {
    json j = parse(path, "checkpoint");
    return ModelSerde::from_json(j.at("model"));
}

// ---- reports ----------------------------------------------------------------

void save_trace_report(const TraceReport& rep, const std::filesystem::path& path, const Provenance& prov) {
    json j = header("trace_report", prov);
    j["estimator"] = rep.estimator;
    j["batch_size"] = rep.batch_size;
    j["seed"] = rep.seed;
    j["tolerance"] = rep.tolerance;
    j["max_iters"] = rep.max_iters;
    j["window"] = rep.window;
    j["per_parameter"] = rep.per_parameter;
    j["converged"] = rep.converged;
    j["iterations"] = rep.iterations;
    json blocks = json::array();
    for (const auto& b : rep.blocks)
        blocks.push_back({{"name", b.name},
                          {"mean_trace", b.mean_trace},
                          {"variance", b.variance},
                          {"iterations", b.iterations},
                          {"n", b.n}});
    j["blocks"] = std::move(blocks);
    write_file(path, dump(j));
}

TraceReport load_trace_report(const std::filesystem::path& path) {
    json j = parse(path, "trace_report");
    TraceReport rep;
    rep.estimator = j.at("estimator").get<std::string>();
    rep.batch_size = j.at("batch_size").get<int64_t>();
    rep.seed = j.at("seed").get<uint64_t>();
    rep.tolerance = j.at("tolerance").get<double>();
    rep.max_iters = j.at("max_iters").get<int64_t>();
    rep.window = j.at("window").get<int64_t>();
    rep.per_parameter = j.at("per_parameter").get<bool>();
    rep.converged = j.at("converged").get<bool>();
    rep.iterations = j.at("iterations").get<int64_t>();
    for (const auto& b : j.at("blocks")) {
        BlockTrace bt;
        bt.name = b.at("name").get<std::string>();
        bt.mean_trace = b.at("mean_trace").get<double>();
        bt.variance = b.at("variance").get<double>();
        bt.iterations = b.at("iterations").get<int64_t>();
        bt.n = b.at("n").get<int64_t>();
        rep.blocks.push_back(std::move(bt));
    }
    return rep;
}

void save_ranges(const Ranges& r, const std::filesystem::path& path, const Provenance& prov) {
    json j = header("ranges", prov);
    j["ema_decay"] = r.ema_decay;
    json w = json::object(), a = json::object();
    for (const auto& [name, rr] : r.weight) w[name] = {{"lo", rr.lo}, {"hi", rr.hi}};
    for (const auto& [name, rr] : r.act) a[name] = {{"lo", rr.lo}, {"hi", rr.hi}};
    j["weight"] = std::move(w);
    j["act"] = std::move(a);
    write_file(path, dump(j));
}

Ranges load_ranges(const std::filesystem::path& path) {
    json j = parse(path, "ranges");
    Ranges r;
    r.ema_decay = j.at("ema_decay").get<double>();
    for (const auto& [name, rr] : j.at("weight").items())
        r.weight[name] = {rr.at("lo").get<double>(), rr.at("hi").get<double>()};
    for (const auto& [name, rr] : j.at("act").items()) r.act[name] = {rr.at("lo").get<double>(), rr.at("hi").get<double>()};
    return r;
}

void save_bitconfig(const BitConfig& b, const std::filesystem::path& path) {
    json j = header("bitconfig", {});
    json layers = json::array();
    for (const auto& lb : b.layers) layers.push_back({{"layer", lb.layer}, {"w_bits", lb.w_bits}, {"a_bits", lb.a_bits}});
    j["layers"] = std::move(layers);
    write_file(path, dump(j));
}

BitConfig load_bitconfig(const std::filesystem::path& path) {
    json j = parse(path, "bitconfig");
    BitConfig b;
    for (const auto& l : j.at("layers"))
        b.layers.push_back({l.at("layer").get<std::string>(), l.at("w_bits").get<int>(), l.at("a_bits").get<int>()});
    return b;
}

void save_fit_report(const FITReport& rep, const std::filesystem::path& path, const Provenance& prov) {
    json j = header("fit_report", prov);
    j["omega"] = rep.omega;
    j["include_twelfth"] = rep.include_twelfth;
    j["weights_only"] = rep.weights_only;
    j["acts_only"] = rep.acts_only;
    json blocks = json::array();
    for (const auto& b : rep.blocks)
        blocks.push_back({{"layer", b.layer}, {"weight_term", b.weight_term}, {"act_term", b.act_term}});
    j["blocks"] = std::move(blocks);
    json bits = json::array();
    for (const auto& lb : rep.bits.layers)
        bits.push_back({{"layer", lb.layer}, {"w_bits", lb.w_bits}, {"a_bits", lb.a_bits}});
    j["bits"] = std::move(bits);
    write_file(path, dump(j));
}

// ---- csv ----------------------------------------------------------------

void save_sweep_csv(const SweepOutput& sweep, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "# fitq-sweep schema_version=" << kSchemaVersion << "\n";
    os << "config_id";
    if (!sweep.rows.empty())
        for (const auto& lb : sweep.rows.front().bits.layers) os << ",w_" << lb.layer << ",a_" << lb.layer;
    os << ",fit,fit_w,fit_a,qr,noise,bn,train_accuracy,test_accuracy,failed,seed,wall_seconds\n";
    os.precision(17);
    for (const auto& r : sweep.rows) {
        os << r.config_id;
        for (const auto& lb : r.bits.layers) os << "," << lb.w_bits << "," << lb.a_bits;
        os << "," << r.fit << "," << r.fit_w << "," << r.fit_a << "," << r.qr << "," << r.noise << ",";
        if (r.bn) os << *r.bn;
        os << "," << r.train_accuracy << "," << r.test_accuracy << "," << (r.failed ? 1 : 0) << "," << r.seed << ","
           << r.wall_seconds << "\n";
    }
    write_file(path, os.str());
}

std::vector<SweepRow> load_sweep_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("# fitq-sweep schema_version=", 0) != 0)
        throw ValidationError(path.string() + ": not a fitq sweep csv");
    if (line != "# fitq-sweep schema_version=" + std::to_string(kSchemaVersion))
        throw ValidationError(path.string() + ": schema_version mismatch");
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header");

    std::vector<std::string> cols;
    {
        std::istringstream hs(line);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    std::vector<std::string> layer_names;
    for (const auto& c : cols)
        if (c.rfind("w_", 0) == 0) layer_names.push_back(c.substr(2));

    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) f.push_back(c);
        if (f.size() != cols.size()) throw ValidationError(path.string() + ": ragged row");
        size_t k = 0;
        SweepRow r;
        r.config_id = std::stoll(f[k++]);
        for (const auto& name : layer_names) {
            LayerBits lb;
            lb.layer = name;
            lb.w_bits = std::stoi(f[k++]);
            lb.a_bits = std::stoi(f[k++]);
            r.bits.layers.push_back(std::move(lb));
        }
        r.fit = std::stod(f[k++]);
        r.fit_w = std::stod(f[k++]);
        r.fit_a = std::stod(f[k++]);
        r.qr = std::stod(f[k++]);
        r.noise = std::stod(f[k++]);
        if (!f[k].empty()) r.bn = std::stod(f[k]);
        ++k;
        r.train_accuracy = std::stod(f[k++]);
        r.test_accuracy = std::stod(f[k++]);
        r.failed = f[k++] == "1";
        r.seed = std::stoull(f[k++]);
        r.wall_seconds = std::stod(f[k++]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_correlations(const std::vector<CorrelationRow>& rows, const std::filesystem::path& path,
                       const Provenance& prov) {
    json j = header("correlation_report", prov);
    json arr = json::array();
    for (const auto& r : rows) {
        json e;
        e["heuristic"] = r.heuristic;
        if (r.rho_test)
            e["rho_test"] = *r.rho_test;
        else
            e["rho_test"] = nullptr;  // indeterminate
        if (r.rho_train)
            e["rho_train"] = *r.rho_train;
        else
            e["rho_train"] = nullptr;
        e["samples"] = r.samples;
        arr.push_back(std::move(e));
    }
    j["rows"] = std::move(arr);
    write_file(path, dump(j));
}

void save_benchmark(const EstimatorBenchmark& b, const std::filesystem::path& path, const Provenance& prov) {
    json j = header("estimator_benchmark", prov);
    j["ef_variance"] = b.ef_variance;
    j["hutchinson_variance"] = b.hutchinson_variance;
    j["ef_iter_seconds"] = b.ef_iter_seconds;
    j["hutchinson_iter_seconds"] = b.hutchinson_iter_seconds;
    j["speedup"] = b.speedup;
    j["iters"] = b.iters;
    j["repeats"] = b.repeats;
    j["ef_variance_repeats"] = b.ef_variance_repeats;
    j["hutchinson_variance_repeats"] = b.hutchinson_variance_repeats;
    j["ef_time_repeats"] = b.ef_time_repeats;
    j["hutchinson_time_repeats"] = b.hutchinson_time_repeats;
    write_file(path, dump(j));
}

void save_train_history_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "# fitq-history schema_version=" << kSchemaVersion << "\n";
    os << "epoch,mean_loss\n";
    os.precision(17);
    for (size_t i = 0; i < epoch_loss.size(); ++i) os << i << "," << epoch_loss[i] << "\n";
    write_file(path, os.str());
}

}  // namespace fitq
