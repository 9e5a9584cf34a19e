#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depthprune/tensor.hpp"

namespace depthprune {

using BigInt = boost::multiprecision::cpp_int;

/// Binary layer-retention mask; bit i = 1 keeps layer i.
class PruneMask {
  public:
    PruneMask() = default;
    explicit PruneMask(std::size_t n_layers) : bits_(n_layers, 0) {}
    explicit PruneMask(std::vector<std::uint8_t> bits);

    /// Parses "1010"; throws ParseError with the offending offset.
    static PruneMask from_string(std::string_view text);
    /// Throws DomainError unless every entry is exactly 0 or 1.
    static PruneMask from_tensor(const Tensor& t);
    static PruneMask ones(std::size_t n) { return PruneMask(std::vector<std::uint8_t>(n, 1)); }

    std::size_t size() const { return bits_.size(); }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }
    std::size_t popcount() const;
    /// Retained layers in [begin, end).
    std::size_t count(std::size_t begin, std::size_t end) const;

    std::string to_string() const;
    Tensor to_tensor() const;
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    friend bool operator==(const PruneMask&, const PruneMask&) = default;
    friend auto operator<=>(const PruneMask&, const PruneMask&) = default;

  private:
    std::vector<std::uint8_t> bits_;
};

/// N layers split into K = N / B contiguous blocks that each keep s layers.
struct BlockPartition {
    std::size_t n_layers = 0;
    std::size_t block_size = 0;
    std::size_t keep = 0;

    /// Throws DomainError unless B divides N and s <= B.
    void validate() const;
    std::size_t blocks() const { return n_layers / block_size; }
    std::size_t begin(std::size_t block) const { return block * block_size; }
    std::size_t end(std::size_t block) const { return (block + 1) * block_size; }
    std::size_t block_of(std::size_t layer) const { return layer / block_size; }
};

/// The C(B, s) local masks of one block, lexicographically descending
/// ("1100" before "1010" before ... "0011"). Every block shares the table.
class OptionTable {
  public:
    explicit OptionTable(const BlockPartition& part);

    std::size_t size() const { return options_.size(); }
    const std::vector<std::uint8_t>& option(std::size_t index) const;
    const BlockPartition& partition() const { return part_; }
    /// [C(B,s) x B] 0/1 matrix whose rows are the options.
    const Tensor& matrix() const { return matrix_; }

  private:
    BlockPartition part_;
    std::vector<std::vector<std::uint8_t>> options_;
    Tensor matrix_;
};

/// Exact C(n, m).
BigInt count_search_space(std::size_t n, std::size_t m);

struct SubspaceStats {
    BigInt valid;     ///< C(B,s)^K
    BigInt total;     ///< C(N, K*s)
    double fraction;  ///< valid / total
};
SubspaceStats valid_subspace_stats(const BlockPartition& part);

/// True when every block keeps exactly s layers.
bool in_valid_subspace(const PruneMask& mask, const BlockPartition& part);

PruneMask compose_mask(std::span<const std::size_t> choices, const OptionTable& table);

/// Per-layer retention marginals pi_i = P(m_i = 1).
struct MarginalProfile {
    std::vector<double> pi;
};

/// pi from blockwise categorical logits (one tensor of C(B,s) logits per
/// block), summing softmax(logits_j)[o] over options o that keep layer i.
MarginalProfile marginal_profile(std::span<const Tensor> block_logits, const OptionTable& table);

/// Which way a pair (j, j+1) moves retention budget.
enum class Direction {
    DonateForward,   ///< block j loses k layers, block j+1 gains k
    DonateBackward,  ///< block j+1 loses k layers, block j gains k
};

/// The k active layers in [begin, end) with the lowest pi (ties: lower index).
std::vector<std::size_t> lowest_active(const PruneMask& m, const MarginalProfile& pi,
                                       std::size_t begin, std::size_t end, std::size_t k);
/// The k inactive layers in [begin, end) with the highest pi (ties: lower index).
std::vector<std::size_t> highest_inactive(const PruneMask& m, const MarginalProfile& pi,
                                          std::size_t begin, std::size_t end, std::size_t k);

/// Moves k retained layers between blocks `pair` and `pair + 1`.
/// Throws InfeasibleError when the donor or receiver lacks room.
PruneMask apply_transformation(const PruneMask& m, const BlockPartition& part, std::size_t pair,
                               Direction direction, std::size_t k, const MarginalProfile& pi);

struct ExpansionCandidate {
    PruneMask m_hat;  ///< m plus the k highest-pi inactive layers of the block
    Tensor m_plus;    ///< clamp01(m + m_hat)
};

struct CorrosionCandidate {
    PruneMask m_hat;  ///< all ones minus the k lowest-pi active layers of the block
    Tensor m_minus;   ///< m * m_hat
};

/// m is a 0/1-valued tensor that may carry gradients; m_hat is built from its
/// values and enters the tape as a constant.
ExpansionCandidate build_expansion_candidate(Tape& tape, const Tensor& m, const MarginalProfile& pi,
                                             const BlockPartition& part, std::size_t block,
                                             std::size_t k);
CorrosionCandidate build_corrosion_candidate(Tape& tape, const Tensor& m, const MarginalProfile& pi,
                                             const BlockPartition& part, std::size_t block,
                                             std::size_t k);

/// One line of '0'/'1' characters terminated by '\n'.
PruneMask parse_mask(std::string_view text);
PruneMask mask_read(const std::filesystem::path& path);
void mask_write(const PruneMask& m, const std::filesystem::path& path);

}  // namespace depthprune
