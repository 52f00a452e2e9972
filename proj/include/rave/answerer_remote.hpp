#pragma once

// Answerers that reach an external service: an HTTP endpoint accepting a
// POSTed request, or a local command reading the request on stdin and
// writing the response to stdout.

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <string>

#include <httplib.h>

#include "rave/answerer.hpp"

namespace rave {

class HttpAnswerer final : public Answerer {
 public:
  /// `url` like "http://127.0.0.1:8080/answer".
  explicit HttpAnswerer(std::string url, std::chrono::seconds timeout = std::chrono::seconds(60)) : url_(std::move(url)) {
    const auto scheme_end = url_.find("://");
    const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_begin = url_.find('/', host_begin);
    base_ = url_.substr(0, path_begin);
    path_ = path_begin == std::string::npos ? "/" : url_.substr(path_begin);
    timeout_ = timeout;
  }

  [[nodiscard]] std::string id() const override { return "http:" + url_; }

  std::string call(const std::string& request_json) override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    auto res = cli.Post(path_, request_json, "application/json");
    if (!res) throw AnswererFailure(true, "cannot reach " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw AnswererFailure(false, url_ + " returned HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  std::string url_, base_, path_;
  std::chrono::seconds timeout_;
};

/// Runs `/bin/sh -c command` once per request.
class ProcessAnswerer final : public Answerer {
 public:
  explicit ProcessAnswerer(std::string command) : command_(std::move(command)) {}

  [[nodiscard]] std::string id() const override { return "exec:" + command_; }

  std::string call(const std::string& request_json) override {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw AnswererFailure(true, "pipe() failed");
    if (pipe(out_pipe) != 0) {
      close(in_pipe[0]);
      close(in_pipe[1]);
      throw AnswererFailure(true, "pipe() failed");
    }
    const pid_t pid = fork();
    if (pid < 0) throw AnswererFailure(true, "fork() failed");
    if (pid == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    auto* old = std::signal(SIGPIPE, SIG_IGN);
    std::size_t written = 0;
    while (written < request_json.size()) {
      const auto n = write(in_pipe[1], request_json.data() + written, request_json.size() - written);
      if (n <= 0) break;
      written += static_cast<std::size_t>(n);
    }
    close(in_pipe[1]);
    std::string out;
    char buf[4096];
    for (ssize_t n; (n = read(out_pipe[0], buf, sizeof buf)) > 0;) out.append(buf, static_cast<std::size_t>(n));
    close(out_pipe[0]);
    std::signal(SIGPIPE, old);
    int status = 0;
    waitpid(pid, &status, 0);
    if (WIFEXITED(status) && WEXITSTATUS(status) == 127)
      throw AnswererFailure(true, "command not runnable: " + command_);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw AnswererFailure(false, "command exited with status " + std::to_string(WEXITSTATUS(status)));
    return out;
  }

 private:
  std::string command_;
};

}  // namespace rave
