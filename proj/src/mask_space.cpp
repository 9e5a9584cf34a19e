#include "depthprune/mask_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "depthprune/errors.hpp"
#include "depthprune/ops.hpp"

namespace depthprune {

PruneMask::PruneMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (std::uint8_t b : bits_) {
        if (b > 1) throw DomainError("mask bits must be 0 or 1");
    }
}

PruneMask PruneMask::from_string(std::string_view text) {
    std::vector<std::uint8_t> bits;
    bits.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '0' && text[i] != '1') {
            throw ParseError("invalid mask character at byte " + std::to_string(i), i);
        }
        bits.push_back(text[i] == '1' ? 1 : 0);
    }
    return PruneMask(std::move(bits));
}

PruneMask PruneMask::from_tensor(const Tensor& t) {
    std::vector<std::uint8_t> bits;
    bits.reserve(t.size());
    for (double v : t.data()) {
        if (v != 0.0 && v != 1.0) {
            throw DomainError("mask is not binary: found value " + std::to_string(v));
        }
        bits.push_back(v == 1.0 ? 1 : 0);
    }
    return PruneMask(std::move(bits));
}

std::size_t PruneMask::popcount() const { return count(0, bits_.size()); }

std::size_t PruneMask::count(std::size_t begin, std::size_t end) const {
    return static_cast<std::size_t>(std::count(bits_.begin() + static_cast<std::ptrdiff_t>(begin),
                                                bits_.begin() + static_cast<std::ptrdiff_t>(end), 1));
}

std::string PruneMask::to_string() const {
    std::string s;
    s.reserve(bits_.size());
    for (std::uint8_t b : bits_) s.push_back(b ? '1' : '0');
    return s;
}

Tensor PruneMask::to_tensor() const {
    std::vector<double> values(bits_.begin(), bits_.end());
    return Tensor::vector(std::move(values));
}

void BlockPartition::validate() const {
    if (n_layers == 0 || block_size == 0) {
        throw DomainError("partition needs at least one layer and a positive block size");
    }
    if (n_layers % block_size != 0) {
        throw DomainError("block size " + std::to_string(block_size) + " does not divide " +
                          std::to_string(n_layers) + " layers");
    }
    if (keep > block_size) {
        throw DomainError("cannot keep " + std::to_string(keep) + " layers of a block of " +
                          std::to_string(block_size));
    }
}

OptionTable::OptionTable(const BlockPartition& part) : part_(part) {
    part_.validate();
    const std::size_t b = part_.block_size;
    std::vector<std::uint8_t> pattern(b, 0);
    std::fill(pattern.begin(), pattern.begin() + static_cast<std::ptrdiff_t>(part_.keep), 1);
    // Starting from the largest arrangement, prev_permutation walks the rest
    // in descending lexicographic order.
    do {
        options_.push_back(pattern);
    } while (std::prev_permutation(pattern.begin(), pattern.end()));

    std::vector<double> values;
    values.reserve(options_.size() * b);
    for (const auto& o : options_) values.insert(values.end(), o.begin(), o.end());
    matrix_ = Tensor::matrix(options_.size(), b, std::move(values));
}

const std::vector<std::uint8_t>& OptionTable::option(std::size_t index) const {
    if (index >= options_.size()) {
        throw DomainError("option index " + std::to_string(index) + " out of range (" +
                          std::to_string(options_.size()) + " options)");
    }
    return options_[index];
}

BigInt count_search_space(std::size_t n, std::size_t m) {
    if (m > n) {
        throw DomainError("cannot choose " + std::to_string(m) + " of " + std::to_string(n) +
                          " layers");
    }
    m = std::min(m, n - m);
    BigInt result = 1;
    for (std::size_t i = 1; i <= m; ++i) {
        result *= n - m + i;
        result /= i;
    }
    return result;
}

SubspaceStats valid_subspace_stats(const BlockPartition& part) {
    part.validate();
    const std::size_t k = part.blocks();
    const BigInt local = count_search_space(part.block_size, part.keep);
    BigInt valid = 1;
    for (std::size_t j = 0; j < k; ++j) valid *= local;
    BigInt total = count_search_space(part.n_layers, k * part.keep);
    const boost::multiprecision::cpp_rational ratio(valid, total);
    return SubspaceStats{valid, total, ratio.convert_to<double>()};
}

bool in_valid_subspace(const PruneMask& mask, const BlockPartition& part) {
    if (mask.size() != part.n_layers) return false;
    for (std::size_t j = 0; j < part.blocks(); ++j) {
        if (mask.count(part.begin(j), part.end(j)) != part.keep) return false;
    }
    return true;
}

PruneMask compose_mask(std::span<const std::size_t> choices, const OptionTable& table) {
    const BlockPartition& part = table.partition();
    if (choices.size() != part.blocks()) {
        throw ContractError("expected " + std::to_string(part.blocks()) + " block choices, got " +
                            std::to_string(choices.size()));
    }
    PruneMask mask(part.n_layers);
    for (std::size_t j = 0; j < choices.size(); ++j) {
        const auto& local = table.option(choices[j]);
        for (std::size_t i = 0; i < local.size(); ++i) mask.set(part.begin(j) + i, local[i] != 0);
    }
    return mask;
}

MarginalProfile marginal_profile(std::span<const Tensor> block_logits, const OptionTable& table) {
    const BlockPartition& part = table.partition();
    if (block_logits.size() != part.blocks()) {
        throw ContractError("expected logits for " + std::to_string(part.blocks()) + " blocks, got " +
                            std::to_string(block_logits.size()));
    }
    MarginalProfile profile{std::vector<double>(part.n_layers, 0.0)};
    Tape no_grad(false);
    for (std::size_t j = 0; j < block_logits.size(); ++j) {
        if (block_logits[j].size() != table.size()) {
            throw ContractError("block " + std::to_string(j) + " has " +
                                std::to_string(block_logits[j].size()) + " logits for " +
                                std::to_string(table.size()) + " options");
        }
        const Tensor probs = ops::softmax_temperature(no_grad, block_logits[j].detach(), 1.0);
        for (std::size_t o = 0; o < table.size(); ++o) {
            const auto& local = table.option(o);
            for (std::size_t i = 0; i < local.size(); ++i) {
                if (local[i]) profile.pi[part.begin(j) + i] += probs.at(o);
            }
        }
    }
    return profile;
}

namespace {

void check_profile(const PruneMask& m, const MarginalProfile& pi) {
    if (pi.pi.size() != m.size()) {
        throw ContractError("marginal profile length " + std::to_string(pi.pi.size()) +
                            " does not match mask length " + std::to_string(m.size()));
    }
}

std::vector<std::size_t> select_by_pi(const PruneMask& m, const MarginalProfile& pi,
                                      std::size_t begin, std::size_t end, std::size_t k,
                                      bool want_active, bool descending) {
    check_profile(m, pi);
    std::vector<std::size_t> candidates;
    for (std::size_t i = begin; i < end; ++i) {
        if (m[i] == want_active) candidates.push_back(i);
    }
    if (candidates.size() < k) {
        throw InfeasibleError("block [" + std::to_string(begin) + ", " + std::to_string(end) +
                              ") has only " + std::to_string(candidates.size()) + " " +
                              (want_active ? "active" : "inactive") + " layers, needs " +
                              std::to_string(k));
    }
    // Stable sort keeps ascending index order among equal pi values.
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        return descending ? pi.pi[a] > pi.pi[b] : pi.pi[a] < pi.pi[b];
    });
    candidates.resize(k);
    return candidates;
}

}  // namespace

std::vector<std::size_t> lowest_active(const PruneMask& m, const MarginalProfile& pi,
                                       std::size_t begin, std::size_t end, std::size_t k) {
    return select_by_pi(m, pi, begin, end, k, true, false);
}

std::vector<std::size_t> highest_inactive(const PruneMask& m, const MarginalProfile& pi,
                                          std::size_t begin, std::size_t end, std::size_t k) {
    return select_by_pi(m, pi, begin, end, k, false, true);
}

PruneMask apply_transformation(const PruneMask& m, const BlockPartition& part, std::size_t pair,
                               Direction direction, std::size_t k, const MarginalProfile& pi) {
    part.validate();
    if (m.size() != part.n_layers) {
        throw ContractError("mask length " + std::to_string(m.size()) + " does not match " +
                            std::to_string(part.n_layers) + " layers");
    }
    if (pair + 1 >= part.blocks()) {
        throw ContractError("pair index " + std::to_string(pair) + " has no following block");
    }
    const std::size_t donor = direction == Direction::DonateForward ? pair : pair + 1;
    const std::size_t receiver = direction == Direction::DonateForward ? pair + 1 : pair;
    const auto drop = lowest_active(m, pi, part.begin(donor), part.end(donor), k);
    const auto add = highest_inactive(m, pi, part.begin(receiver), part.end(receiver), k);
    PruneMask out = m;
    for (std::size_t i : drop) out.set(i, false);
    for (std::size_t i : add) out.set(i, true);
    return out;
}

ExpansionCandidate build_expansion_candidate(Tape& tape, const Tensor& m, const MarginalProfile& pi,
                                             const BlockPartition& part, std::size_t block,
                                             std::size_t k) {
    if (block >= part.blocks()) throw ContractError("block index out of range");
    const PruneMask hard = PruneMask::from_tensor(m);
    const auto add = highest_inactive(hard, pi, part.begin(block), part.end(block), k);
    PruneMask m_hat = hard;
    for (std::size_t i : add) m_hat.set(i, true);
    Tensor m_plus = ops::clamp01(tape, ops::add(tape, m, m_hat.to_tensor()));
    return ExpansionCandidate{std::move(m_hat), std::move(m_plus)};
}

CorrosionCandidate build_corrosion_candidate(Tape& tape, const Tensor& m, const MarginalProfile& pi,
                                             const BlockPartition& part, std::size_t block,
                                             std::size_t k) {
    if (block >= part.blocks()) throw ContractError("block index out of range");
    const PruneMask hard = PruneMask::from_tensor(m);
    const auto drop = lowest_active(hard, pi, part.begin(block), part.end(block), k);
    PruneMask m_hat = PruneMask::ones(hard.size());
    for (std::size_t i : drop) m_hat.set(i, false);
    Tensor m_minus = ops::mul(tape, m, m_hat.to_tensor());
    return CorrosionCandidate{std::move(m_hat), std::move(m_minus)};
}

PruneMask parse_mask(std::string_view text) {
    if (text.empty()) throw ParseError("empty mask file", 0);
    std::vector<std::uint8_t> bits;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            if (i + 1 != text.size()) {
                throw ParseError("unexpected content after newline at byte " + std::to_string(i + 1),
                                 i + 1);
            }
            if (bits.empty()) throw ParseError("mask line is empty", 0);
            return PruneMask(std::move(bits));
        }
        if (c != '0' && c != '1') {
            throw ParseError("invalid mask character at byte " + std::to_string(i), i);
        }
        bits.push_back(c == '1' ? 1 : 0);
    }
    throw ParseError("mask line is not newline-terminated", text.size());
}

PruneMask mask_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mask file '" + path.string() + "'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_mask(text);
}

void mask_write(const PruneMask& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << m.to_string() << '\n';
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace depthprune
