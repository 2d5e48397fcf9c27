#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace kcd::log {

inline std::atomic<long>& warning_count() {
    static std::atomic<long> count{0};
    return count;
}

inline std::atomic<bool>& verbose_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

inline void warn(std::string_view msg) {
    ++warning_count();
    std::lock_guard lock(sink_mutex());
    std::cerr << "warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
    if (!verbose_flag()) return;
    std::lock_guard lock(sink_mutex());
    std::cerr << msg << '\n';
}

} // namespace kcd::log
