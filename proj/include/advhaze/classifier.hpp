#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "advhaze/cnn.hpp"
#include "advhaze/error.hpp"
#include "advhaze/image.hpp"
#include "advhaze/io.hpp"
#include "advhaze/resize.hpp"

namespace advhaze {

/// A classifier that can score images at their native resolution.
template <class C>
concept ForwardClassifier = requires(const C& c, const Image& img) {
    { c.logits(img) } -> std::same_as<Logits>;
};

/// A classifier that also provides the exact loss gradient w.r.t. its input.
template <class C>
concept DifferentiableClassifier = ForwardClassifier<C> && requires(const C& c, const Image& img, std::size_t y) {
    { c.loss_gradient(img, y) } -> std::same_as<LossGradient>;
};

/// The reference CNN behind a bilinear resize to its input side. Haze is
/// applied at native resolution; gradients come back through the resize
/// adjoint.
class ReferenceClassifier {
public:
    explicit ReferenceClassifier(ReferenceCnnWeights w) : w_(std::move(w)) { w_.validate(); }

    const ReferenceCnnWeights& weights() const noexcept { return w_; }
    std::size_t num_classes() const noexcept { return w_.num_classes; }

    Logits logits(const Image& img) const { return forward(w_, to_input(img)); }

    LossGradient loss_gradient(const Image& img, std::size_t y) const {
        LossGradient lg = loss_and_input_gradient(w_, to_input(img), y);
        lg.grad = resize_bilinear_adjoint(lg.grad, img.height(), img.width());
        return lg;
    }

private:
    Image to_input(const Image& img) const { return resize_bilinear(img, w_.input_side, w_.input_side); }

    ReferenceCnnWeights w_;
};

static_assert(DifferentiableClassifier<ReferenceClassifier>);

/// How to reach an externally hosted, forward-only classifier. The command is
/// run through /bin/sh as `<command> '<png-path>'`; it must print a JSON array
/// of `num_classes` numbers on stdout and exit with status 0.
struct AdapterConfig {
    std::string command;
    std::size_t num_classes = 10;
    std::chrono::milliseconds timeout{30000};
};

namespace adapter_detail {

inline std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char ch : s) {
        if (ch == '\'') q += "'\\''";
        else q += ch;
    }
    return q + "'";
}

struct ProcessOutput {
    int status = 0;
    std::string out;
};

inline ProcessOutput run_shell(const std::string& cmd, std::chrono::milliseconds timeout) {
    using Kind = AdapterError::Kind;
    int fds[2];
    if (pipe(fds) != 0) throw AdapterError(Kind::process_failure, "adapter: pipe() failed");
    const pid_t pid = fork();
    if (pid < 0) {
        close(fds[0]);
        close(fds[1]);
        throw AdapterError(Kind::process_failure, "adapter: fork() failed");
    }
    if (pid == 0) {
        dup2(fds[1], STDOUT_FILENO);
        close(fds[0]);
        close(fds[1]);
        execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(fds[1]);

    ProcessOutput res;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[4096];
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            kill(pid, SIGKILL);
            close(fds[0]);
            waitpid(pid, nullptr, 0);
            throw AdapterError(Kind::timeout, "adapter: timed out: " + cmd);
        }
        pollfd pfd{fds[0], POLLIN, 0};
        const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
        if (ready < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (ready == 0) continue;
        const ssize_t n = read(fds[0], buf, sizeof buf);
        if (n <= 0) break;
        res.out.append(buf, static_cast<std::size_t>(n));
    }
    close(fds[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    res.status = status;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw AdapterError(Kind::process_failure, "adapter: command failed (status " + std::to_string(status) + "): " + cmd);
    }
    return res;
}

}  // namespace adapter_detail

/// Parses the adapter's stdout: a JSON array of exactly `expected` finite numbers.
inline Logits parse_adapter_response(const std::string& text, std::size_t expected) {
    using Kind = AdapterError::Kind;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw AdapterError(Kind::malformed_response, std::string("adapter: response is not JSON: ") + e.what());
    }
    if (!j.is_array()) throw AdapterError(Kind::malformed_response, "adapter: response is not a JSON array");
    Logits l;
    for (const auto& v : j) {
        if (!v.is_number()) throw AdapterError(Kind::malformed_response, "adapter: non-numeric score");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw AdapterError(Kind::malformed_response, "adapter: non-finite score");
        l.values.push_back(d);
    }
    if (l.size() != expected) {
        throw AdapterError(Kind::class_count_mismatch, "adapter: expected " + std::to_string(expected) + " scores, got " +
                                                           std::to_string(l.size()));
    }
    return l;
}

/// Forward-only classifier running in another process.
class ExternalClassifier {
public:
    explicit ExternalClassifier(AdapterConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.command.empty()) throw ConfigError("adapter: empty command");
        if (cfg_.num_classes < 2) throw ConfigError("adapter: need at least two classes");
    }

    std::size_t num_classes() const noexcept { return cfg_.num_classes; }

    Logits logits_for_file(const std::filesystem::path& png) const {
        const auto res = adapter_detail::run_shell(cfg_.command + " " + adapter_detail::shell_quote(png.string()), cfg_.timeout);
        return parse_adapter_response(res.out, cfg_.num_classes);
    }

    /// Writes the image to a temporary PNG (so it is quantized to 8 bits) and
    /// classifies that file.
    Logits logits(const Image& img) const {
        std::string tmpl = (std::filesystem::temp_directory_path() / "advhaze-XXXXXX.png").string();
        const int fd = mkstemps(tmpl.data(), 4);
        if (fd < 0) throw IoError("adapter: cannot create temporary file");
        close(fd);
        const std::filesystem::path path(tmpl);
        try {
            save_image(img, path);
            Logits l = logits_for_file(path);
            std::filesystem::remove(path);
            return l;
        } catch (...) {
            std::error_code ec;
            std::filesystem::remove(path, ec);
            throw;
        }
    }

private:
    AdapterConfig cfg_;
};

static_assert(ForwardClassifier<ExternalClassifier>);

/// Type-erased forward-only model, used where models are chosen at run time.
struct NamedModel {
    std::string id;
    std::function<Logits(const Image&)> logits;
};

}  // namespace advhaze
