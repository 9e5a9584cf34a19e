#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "depthprune/tensor.hpp"

namespace depthprune {

/// Binary tensor container, little-endian:
///   "TPKT0001" | u32 count | count x (u16 name_len, name, u8 rank,
///   rank x u32 dim, prod(dims) x f64)
inline constexpr std::string_view kCheckpointMagic = "TPKT0001";

/// Named tensors in write order. Order is preserved so output bytes are
/// reproducible.
class Checkpoint {
  public:
    void add(std::string name, const Tensor& tensor);
    bool contains(std::string_view name) const;
    /// Throws CheckpointError when the name is absent.
    const Tensor& get(std::string_view name) const;
    std::optional<Tensor> find(std::string_view name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::vector<std::uint8_t> encode() const;
    static Checkpoint decode(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace depthprune
