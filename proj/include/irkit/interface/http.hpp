#pragma once

#include <memory>
#include <string>

#include "irkit/interface/service.hpp"

namespace irkit::service {

// HTTP front end over a Service. Every path is forwarded to Service::handle.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop(). In-flight requests finish before it returns.
  bool listen_after_bind();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace irkit::service
