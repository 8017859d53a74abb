#include "flowsteer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "flowsteer/errors.hpp"

namespace flowsteer {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void doubles(std::span<double> out, const char* what) {
        need(out.size() * sizeof(double), what);
        std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }

    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n)
            throw ParseError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                                 std::to_string(pos_),
                             pos_);
    }

    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

Reader open_reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes));
}

struct Header {
    std::uint64_t hash;
    std::string config_text;
};

Header read_header(Reader& r) {
    if (r.text(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint file (bad magic)", 0);
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
    Header h;
    h.hash = r.get<std::uint64_t>("config hash");
    const auto len = r.get<std::uint32_t>("config length");
    h.config_text = r.text(len, "config text");
    return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, model.config().hash());
    const std::string text = model.config().canonical();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    const auto& entries = model.parameters().entries();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (auto e : tensor.shape()) put<std::uint64_t>(out, e);
        for (double v : tensor.data()) put<double>(out, v);
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void load_checkpoint(const std::filesystem::path& path, Model& model) {
    Reader r = open_reader(path);
    const Header header = read_header(r);
    if (header.hash != model.config().hash())
        throw CheckpointMismatch("checkpoint config hash does not match model (checkpoint: " + header.config_text +
                                 ")");
    const auto& entries = model.parameters().entries();
    const auto count = r.get<std::uint32_t>("record count");
    if (count != entries.size())
        throw CheckpointMismatch("checkpoint has " + std::to_string(count) + " tensors, model has " +
                                 std::to_string(entries.size()));

    std::vector<std::vector<double>> staged;
    for (const auto& [name, tensor] : entries) {
        const auto name_len = r.get<std::uint32_t>("name length");
        const std::string stored = r.text(name_len, "name");
        if (stored != name) throw CheckpointMismatch("expected tensor '" + name + "', found '" + stored + "'");
        const auto rank = r.get<std::uint32_t>("rank");
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>("extent"));
        if (shape != tensor.shape())
            throw CheckpointMismatch("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                                     shape_str(tensor.shape()));
        std::vector<double> values(tensor.numel());
        r.doubles(values, "payload");
        staged.push_back(std::move(values));
    }
    if (!r.at_end()) throw ParseError("trailing bytes after checkpoint records", r.position());

    // Only touch the model once the whole file has been validated.
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor t = entries[i].second;
        auto dst = t.mutable_data();
        std::copy(staged[i].begin(), staged[i].end(), dst.begin());
    }
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    Reader r = open_reader(path);
    const Header header = read_header(r);
    ModelConfig config = parse_model_config(header.config_text);
    if (config.hash() != header.hash) throw CheckpointMismatch("checkpoint header is inconsistent");
    return config;
}

}  // namespace flowsteer
