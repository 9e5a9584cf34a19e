#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depthprune/recovery.hpp"

namespace depthprune {

inline constexpr std::string_view kReportHeader =
    "strategy,seed,mask,loss_init,loss_final,recovery_ratio";

/// Writes the whole file or throws IoError naming the path. The text goes to
/// a sibling temporary first, so a failed write leaves no partial file.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

/// CSV text sorted by (strategy, seed); reals printed with 17 significant
/// digits; each line ends in a single '\n'.
std::string format_report(std::vector<RecoveryRecord> rows);
std::vector<RecoveryRecord> parse_report(std::string_view text);

/// Header-only output for zero rows.
void write_report(std::span<const RecoveryRecord> rows, const std::filesystem::path& path);
/// write_report that insists on at least one record.
void recoverability_report(std::span<const RecoveryRecord> records,
                           const std::filesystem::path& path);

}  // namespace depthprune
