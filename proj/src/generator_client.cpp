// Eigen must come before httplib: <resolv.h> defines a `_res` macro.
#include "kinject/errors.hpp"
#include "kinject/knowledge.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

namespace kinject {

struct HttpGenerator::Impl {
  std::string base;  // scheme://host[:port]
  std::string path;
  double timeout = 10.0;
};

HttpGenerator::HttpGenerator(std::string url, double timeout_seconds) : impl_(std::make_unique<Impl>()) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0) {
    throw InvalidArgument("generator url must start with http://: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  impl_->base = url.substr(0, path_start);
  impl_->path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (!(timeout_seconds > 0.0)) throw InvalidArgument("generator timeout must be positive");
  impl_->timeout = timeout_seconds;
}

HttpGenerator::~HttpGenerator() = default;

std::vector<std::string> HttpGenerator::complete(const std::string& prompt, std::size_t max_tokens,
                                                 std::size_t n, double top_p, std::uint64_t seed) {
  httplib::Client client(impl_->base);
  const auto secs = static_cast<time_t>(impl_->timeout);
  const auto usecs = static_cast<time_t>((impl_->timeout - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  const nlohmann::json request = {
      {"prompt", prompt}, {"max_tokens", max_tokens}, {"n", n}, {"top_p", top_p}, {"seed", seed}};
  auto res = client.Post(impl_->path, request.dump(), "application/json");
  if (!res) {
    throw SourceUnavailable("generator request to " + impl_->base + impl_->path +
                            " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw SourceUnavailable("generator returned HTTP " + std::to_string(res->status));
  }
  std::vector<std::string> out;
  try {
    const auto body = nlohmann::json::parse(res->body);
    for (const auto& c : body.at("completions")) out.push_back(c.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw SourceUnavailable(std::string("malformed generator response: ") + e.what());
  }
  if (out.size() > n) out.resize(n);
  return out;
}

}  // namespace kinject
