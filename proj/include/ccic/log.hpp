#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace ccic {

/// Shared library logger; level comes from CCIC_LOG_LEVEL (error|warn|info|debug),
/// default warn.
std::shared_ptr<spdlog::logger> logger();

}  // namespace ccic
