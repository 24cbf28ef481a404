#include "reflectdiffu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'F', 'D', '1'};

class Writer {
public:
    template <class T>
    void pod(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        buf_ += s;
    }
    void doubles(std::span<const double> v) {
        pod(static_cast<std::uint64_t>(v.size()));
        buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data) : buf_(std::move(data)) {}

    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> doubles() {
        const auto n = pod<std::uint64_t>();
        if (n > (buf_.size() - pos_) / sizeof(double)) truncated();
        std::vector<double> v(n);
        std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) truncated();
    }
    [[noreturn]] static void truncated() { throw CheckpointError(CheckpointErrc::truncated, "checkpoint: truncated file"); }
    std::string buf_;
    std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t config_hash(const ModelConfig& cfg) { return fnv1a(model_config_to_json(cfg).dump()); }

void save_checkpoint(const std::filesystem::path& path, const ReflectDiffu& model, const Adam* optimizer) {
    Writer w;
    w.raw(kMagic, 4);
    w.pod(kCheckpointVersion);
    const std::string cfg = model_config_to_json(model.config()).dump();
    w.pod(fnv1a(cfg));
    w.str(cfg);

    const auto& tokens = model.vocab().tokens();
    w.pod(static_cast<std::uint32_t>(tokens.size()));
    for (const auto& t : tokens) w.str(t);

    const auto& params = model.parameters().all();
    w.pod(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.pod(static_cast<std::uint32_t>(p.tensor.shape().size()));
        for (auto dim : p.tensor.shape()) w.pod(static_cast<std::uint64_t>(dim));
        w.doubles(p.tensor.data());
    }

    w.pod(static_cast<std::uint8_t>(optimizer ? 1 : 0));
    if (optimizer) {
        w.pod(static_cast<std::uint64_t>(optimizer->steps()));
        const auto& m = optimizer->first_moments();
        const auto& v = optimizer->second_moments();
        w.pod(static_cast<std::uint32_t>(m.size()));
        for (std::size_t i = 0; i < m.size(); ++i) {
            w.str(optimizer->params()[i].name);
            w.doubles(m[i]);
            w.doubles(v[i]);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrc::io, "checkpoint: cannot write " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError(CheckpointErrc::io, "checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointErrc::io, "checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 4) throw CheckpointError(CheckpointErrc::truncated, "checkpoint: truncated file");
    if (std::memcmp(data.data(), kMagic, 4) != 0) throw CheckpointError(CheckpointErrc::bad_magic, "checkpoint: bad magic");

    Reader r(data.substr(4));
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointErrc::version_mismatch,
                              "checkpoint: format version " + std::to_string(version) + ", expected " +
                                  std::to_string(kCheckpointVersion));
    const auto stored_hash = r.pod<std::uint64_t>();
    const std::string cfg_text = r.str();
    if (fnv1a(cfg_text) != stored_hash)
        throw CheckpointError(CheckpointErrc::hash_mismatch, "checkpoint: config hash does not match stored config");

    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(cfg_text));
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointErrc::hash_mismatch, std::string("checkpoint: unreadable config: ") + e.what());
    }
    if (expected && config_hash(*expected) != stored_hash)
        throw CheckpointError(CheckpointErrc::config_mismatch, "checkpoint: config differs from the expected one");

    const auto n_tokens = r.pod<std::uint32_t>();
    std::vector<std::string> tokens;
    tokens.reserve(n_tokens);
    for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(r.str());
    Vocab vocab;
    try {
        vocab = Vocab::from_tokens(tokens);
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointErrc::vocab_mismatch, std::string("checkpoint: bad vocabulary: ") + e.what());
    }
    if (vocab.size() != cfg.vocab_size)
        throw CheckpointError(CheckpointErrc::vocab_mismatch, "checkpoint: vocabulary size differs from config");

    LoadedCheckpoint out;
    out.config_hash = stored_hash;
    out.model = std::make_unique<ReflectDiffu>(cfg, std::move(vocab));
    ParameterSet& ps = out.model->parameters();
    const auto n_params = r.pod<std::uint32_t>();
    if (n_params != ps.all().size())
        throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: parameter count differs from the model");
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 2) throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: bad rank for " + name);
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
        const auto values = r.doubles();
        if (!ps.contains(name))
            throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: unknown parameter " + name);
        Tensor t = ps.get(name);
        if (t.shape() != shape || values.size() != t.size())
            throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: shape mismatch for " + name);
        std::copy(values.begin(), values.end(), t.mutable_data().begin());
    }

    out.has_optimizer = r.pod<std::uint8_t>() != 0;
    if (out.has_optimizer) {
        out.step = r.pod<std::uint64_t>();
        const auto trainable = ps.trainable();
        const auto n = r.pod<std::uint32_t>();
        if (n != trainable.size())
            throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: optimizer state size mismatch");
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::string name = r.str();
            if (name != trainable[i].name)
                throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: optimizer order mismatch at " + name);
            out.first_moments.push_back(r.doubles());
            out.second_moments.push_back(r.doubles());
            if (out.first_moments.back().size() != trainable[i].tensor.size() ||
                out.second_moments.back().size() != trainable[i].tensor.size())
                throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: moment size mismatch for " + name);
        }
    }
    if (!r.at_end()) throw CheckpointError(CheckpointErrc::truncated, "checkpoint: trailing bytes");
    return out;
}

void LoadedCheckpoint::restore_optimizer(Adam& opt) const {
    if (!has_optimizer) return;
    if (opt.first_moments().size() != first_moments.size())
        throw CheckpointError(CheckpointErrc::parameter_mismatch, "checkpoint: optimizer has a different parameter list");
    opt.first_moments() = first_moments;
    opt.second_moments() = second_moments;
    opt.set_steps(step);
}

}  // namespace rd
