#include "depthprune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "depthprune/errors.hpp"

namespace depthprune {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T le() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    std::string text(std::size_t n) {
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

  private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(std::string name, const Tensor& tensor) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw CheckpointError("tensor name too long: " + name.substr(0, 32) + "...");
    }
    if (contains(name)) throw CheckpointError("duplicate tensor name '" + name + "'");
    entries_.emplace_back(std::move(name), tensor);
}

bool Checkpoint::contains(std::string_view name) const { return find(name).has_value(); }

std::optional<Tensor> Checkpoint::find(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    return std::nullopt;
}

const Tensor& Checkpoint::get(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw CheckpointError("checkpoint has no tensor named '" + std::string(name) + "'");
}

std::vector<std::uint8_t> Checkpoint::encode() const {
    std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, tensor] : entries_) {
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
            throw CheckpointError("tensor '" + name + "' has too many dimensions");
        }
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Checkpoint Checkpoint::decode(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (bytes.size() < kCheckpointMagic.size()) {
        throw CheckpointError("not a TPKT checkpoint: file shorter than the magic header");
    }
    const std::string magic = in.text(kCheckpointMagic.size());
    if (magic != kCheckpointMagic) {
        if (magic.starts_with("TPKT")) {
            throw CheckpointError("unsupported checkpoint version '" + magic + "' (expected " +
                                  std::string(kCheckpointMagic) + ")");
        }
        throw CheckpointError("not a TPKT checkpoint (expected magic " +
                              std::string(kCheckpointMagic) + ")");
    }
    Checkpoint ckpt;
    const auto count = in.le<std::uint32_t>();
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = in.le<std::uint16_t>();
        std::string name = in.text(name_len);
        const auto rank = in.le<std::uint8_t>();
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) {
            const auto d = in.le<std::uint32_t>();
            if (d == 0) throw CheckpointError("tensor '" + name + "' has a zero dimension");
            shape.push_back(d);
        }
        std::vector<double> values(shape_size(shape));
        for (double& v : values) v = std::bit_cast<double>(in.le<std::uint64_t>());
        ckpt.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!in.at_end()) {
        throw CheckpointError("trailing bytes after tensor " + std::to_string(count) +
                              " at offset " + std::to_string(in.pos()));
    }
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = encode();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace depthprune
