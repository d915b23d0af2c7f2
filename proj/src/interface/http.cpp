#include "irkit/interface/http.hpp"

#include "httplib.h"

namespace irkit::service {

struct HttpServer::Impl {
  const Service& service;
  httplib::Server server;

  explicit Impl(const Service& s) : service(s) {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const Reply r = service.handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump() + "\n", "application/json");
    };
    const char* any = R"(/.*)";
    server.Get(any, forward);
    server.Post(any, forward);
    server.Put(any, forward);
    server.Delete(any, forward);
    server.Patch(any, forward);
  }
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace irkit::service
