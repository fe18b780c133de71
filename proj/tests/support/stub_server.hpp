// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

namespace m3d::testkit {

/// Loopback HTTP server on an ephemeral port, stopped on destruction.
/// Records request bodies per path.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  StubServer() = default;
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;
  ~StubServer() { stop(); }

  void post(const std::string& path, Handler h) {
    server_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      record(req);
      h(req, res);
    });
  }
  void get(const std::string& path, Handler h) {
    server_.Get(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      record(req);
      h(req, res);
    });
  }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_.load(); }
  std::vector<std::string> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> paths() const {
    std::lock_guard lock(mu_);
    return paths_;
  }

 private:
  void record(const httplib::Request& req) {
    ++hits_;
    std::lock_guard lock(mu_);
    bodies_.push_back(req.body);
    paths_.push_back(req.path);
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  mutable std::mutex mu_;
  std::vector<std::string> bodies_;
  std::vector<std::string> paths_;
};

}  // namespace m3d::testkit
