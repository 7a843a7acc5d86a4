#include "auxq/log.hpp"

#include <atomic>
#include <iostream>

namespace auxq::log {

namespace {
std::atomic<Level> g_level{Level::Warn};
}

void set_level(Level l) noexcept { g_level.store(l); }
Level level() noexcept { return g_level.load(); }

void write(Level l, std::string_view message)
{
    if (l < g_level.load()) return;
    static constexpr const char* names[] = {"debug", "info", "warning", "error"};
    std::clog << "[auxq] " << names[static_cast<int>(l)] << ": " << message << '\n';
}

}  // namespace auxq::log
