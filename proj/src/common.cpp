#include "crossalign/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace crossalign {

namespace {

std::atomic<std::uint64_t> g_warnings{0};
std::mutex g_sink_mutex;
std::function<void(const std::string&)> g_sink;

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::vna:
      return "vna";
    case Method::direct_encode:
      return "direct-encode";
    case Method::direct_decode:
      return "direct-decode";
  }
  return "unknown";
}

std::string to_string(TaskMode mode) {
  return mode == TaskMode::encoding ? "encoding" : "decoding";
}

Method parse_method(const std::string& text) {
  if (text == "vna") return Method::vna;
  if (text == "direct-encode") return Method::direct_encode;
  if (text == "direct-decode") return Method::direct_decode;
  throw ArgumentError("unknown method '" + text + "' (expected vna, direct-encode or direct-decode)");
}

TaskMode parse_task_mode(const std::string& text) {
  if (text == "encoding") return TaskMode::encoding;
  if (text == "decoding") return TaskMode::decoding;
  throw ArgumentError("unknown task mode '" + text + "' (expected encoding or decoding)");
}

void warn(const std::string& message) {
  g_warnings.fetch_add(1);
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

std::uint64_t warning_count() { return g_warnings.load(); }

void set_warning_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard lock(g_sink_mutex);
  g_sink = std::move(sink);
}

unsigned worker_count() {
  if (const char* env = std::getenv("CROSSALIGN_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) {
      return static_cast<unsigned>(n);
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) {
    u1 = uniform01(rng);
  }
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace crossalign
