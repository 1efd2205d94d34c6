#pragma once

#include <poseval/archive.hpp>
#include <poseval/core.hpp>
#include <poseval/geometry.hpp>
#include <poseval/metrics.hpp>
#include <poseval/normalize.hpp>
#include <poseval/skeleton.hpp>

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace poseval {

/// Failures attributable to a prediction source (exit code 3).
struct PredictionError : Error {
  enum class Kind { file, shape, not_centered, missing_id, extra_id, duplicate_id, spawn, handshake, malformed, timeout, child_exit };

  PredictionError(Kind k, const std::string& what, std::optional<std::int64_t> request = std::nullopt)
      : Error(ErrorClass::prediction, label(k) + what + (request ? " (request " + std::to_string(*request) + ")" : "")),
        kind(k),
        request_id(request) {}

  Kind kind;
  std::optional<std::int64_t> request_id;

  static std::string label(Kind k) {
    switch (k) {
      case Kind::file: return "prediction file: ";
      case Kind::shape: return "prediction shape: ";
      case Kind::not_centered: return "prediction not hip-centered: ";
      case Kind::missing_id: return "missing prediction: ";
      case Kind::extra_id: return "unknown prediction id: ";
      case Kind::duplicate_id: return "duplicate prediction id: ";
      case Kind::spawn: return "model spawn: ";
      case Kind::handshake: return "model handshake: ";
      case Kind::malformed: return "malformed model frame: ";
      case Kind::timeout: return "model timeout: ";
      case Kind::child_exit: return "model exited: ";
    }
    return "prediction: ";
  }
};

/// Hip-centered camera-space predictions keyed by sample id.
struct PredictionBatch {
  std::vector<std::string> sample_ids;
  std::vector<Joints3> joints_3d;

  std::size_t size() const { return sample_ids.size(); }

  void validate(int num_joints, int root = 0) const {
    if (sample_ids.size() != joints_3d.size()) throw PredictionError(PredictionError::Kind::shape, "ids and poses differ in count");
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
      if (!seen.emplace(sample_ids[i], i).second) throw PredictionError(PredictionError::Kind::duplicate_id, sample_ids[i]);
      if (joints_3d[i].rows() != num_joints)
        throw PredictionError(PredictionError::Kind::shape, sample_ids[i] + " has " + std::to_string(joints_3d[i].rows()) +
                                                                " joints, expected " + std::to_string(num_joints));
      if (!all_finite(joints_3d[i])) throw PredictionError(PredictionError::Kind::shape, sample_ids[i] + " is not finite");
      if (joints_3d[i].row(root).cwiseAbs().maxCoeff() > kCenteredTolerance)
        throw PredictionError(PredictionError::Kind::not_centered, sample_ids[i]);
    }
  }
};

inline void write_prediction_file(const std::string& path, const PredictionBatch& batch, const JointSet& set) {
  batch.validate(set.size(), set.root_index);
  DatasetArchive a;
  a.manifest = {{"kind", "predictions"}, {"joint_set", set.name}, {"units", "mm"}, {"sample_ids", batch.sample_ids}};
  Tensor t;
  t.shape = {static_cast<std::int64_t>(batch.size()), set.size(), 3};
  t.data.reserve(batch.size() * static_cast<std::size_t>(set.size()) * 3);
  for (const auto& p : batch.joints_3d)
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (int c = 0; c < 3; ++c) t.data.push_back(static_cast<float>(p(r, c)));
  a.tensors.emplace("joints_3d", std::move(t));
  write_archive(path, a);
}

/// Streams a prediction archive in row batches.
class PredictionFile {
 public:
  PredictionFile(const std::string& path, const JointSet& set) : set_(set) {
    try {
      reader_.emplace(path);
    } catch (const ArchiveError& e) {
      throw PredictionError(PredictionError::Kind::file, e.what());
    }
    const auto& m = reader_->manifest();
    if (m.value("kind", std::string()) != "predictions")
      throw PredictionError(PredictionError::Kind::file, path + " is not a predictions archive");
    if (!m.contains("sample_ids") || !m["sample_ids"].is_array())
      throw PredictionError(PredictionError::Kind::file, path + ": manifest lacks sample_ids");
    for (const auto& id : m["sample_ids"]) {
      if (!id.is_string()) throw PredictionError(PredictionError::Kind::file, path + ": non-string sample id");
      ids_.push_back(id.get<std::string>());
    }
    if (!reader_->has_tensor("joints_3d")) throw PredictionError(PredictionError::Kind::file, path + ": no joints_3d tensor");
    const std::vector<std::int64_t> want{static_cast<std::int64_t>(ids_.size()), set.size(), 3};
    if (reader_->shape("joints_3d") != want) {
      std::string got;
      for (auto d : reader_->shape("joints_3d")) got += (got.empty() ? "" : "x") + std::to_string(d);
      throw PredictionError(PredictionError::Kind::shape, path + ": joints_3d is " + got + ", expected " +
                                                             std::to_string(ids_.size()) + "x" + std::to_string(set.size()) + "x3");
    }
  }

  const std::vector<std::string>& sample_ids() const { return ids_; }

  /// Next `max_rows` predictions in file order; false when exhausted.
  bool next(PredictionBatch& out, std::int64_t max_rows = 4096) {
    out.sample_ids.clear();
    out.joints_3d.clear();
    const auto total = static_cast<std::int64_t>(ids_.size());
    if (pos_ >= total) return false;
    const std::int64_t n = std::min(max_rows, total - pos_);
    const std::int64_t j = set_.size();
    scratch_.resize(static_cast<std::size_t>(n * j * 3));
    reader_->read_rows("joints_3d", pos_, n, scratch_.data());
    for (std::int64_t i = 0; i < n; ++i) {
      out.sample_ids.push_back(ids_[static_cast<std::size_t>(pos_ + i)]);
      out.joints_3d.push_back(
          Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>>(scratch_.data() + i * j * 3, j, 3)
              .cast<double>());
    }
    pos_ += n;
    return true;
  }

 private:
  std::optional<ArchiveReader> reader_;
  const JointSet& set_;
  std::vector<std::string> ids_;
  std::int64_t pos_ = 0;
  std::vector<float> scratch_;
};

/// Predictions from `path` reordered to `expected_ids`. File row order is
/// irrelevant; missing, unknown and duplicate ids are errors.
inline std::vector<Joints3> load_prediction_file(const std::string& path, const JointSet& set,
                                                 const std::vector<std::string>& expected_ids) {
  PredictionFile file(path, set);
  std::unordered_map<std::string, std::size_t> slot;
  slot.reserve(expected_ids.size());
  for (std::size_t i = 0; i < expected_ids.size(); ++i) slot.emplace(expected_ids[i], i);

  std::unordered_map<std::string, bool> seen;
  for (const auto& id : file.sample_ids()) {
    if (!slot.count(id)) throw PredictionError(PredictionError::Kind::extra_id, id);
    if (!seen.emplace(id, true).second) throw PredictionError(PredictionError::Kind::duplicate_id, id);
  }
  for (const auto& id : expected_ids)
    if (!seen.count(id)) throw PredictionError(PredictionError::Kind::missing_id, id);

  std::vector<Joints3> out(expected_ids.size());
  PredictionBatch batch;
  while (file.next(batch)) {
    batch.validate(set.size(), set.root_index);
    for (std::size_t i = 0; i < batch.size(); ++i) out[slot.at(batch.sample_ids[i])] = std::move(batch.joints_3d[i]);
  }
  return out;
}

/// Ground truth plus i.i.d. N(0, sigma^2) per coordinate on every non-root
/// joint. The root row is left at its ground-truth value.
inline std::vector<Joints3> oracle_with_noise(const std::vector<Joints3>& gt, double sigma_mm, std::uint64_t seed,
                                              int root = 0) {
  if (!(sigma_mm >= 0.0) || !std::isfinite(sigma_mm))
    throw Error(ErrorClass::validation, "oracle sigma must be finite and >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Joints3> out = gt;
  for (auto& p : out)
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (r == root) continue;
      for (int c = 0; c < 3; ++c) p(r, c) += sigma_mm * noise(rng);
    }
  return out;
}

/// Frame indices of a centered window of `frames` around `center` in a
/// sequence of length n, replicating the edge frames as padding.
inline std::vector<std::size_t> window_indices(std::size_t n, std::size_t center, int frames) {
  if (n == 0 || center >= n) throw Error(ErrorClass::internal, "window center outside sequence");
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(frames));
  const auto first = static_cast<std::int64_t>(center) - frames / 2;
  for (int k = 0; k < frames; ++k)
    idx.push_back(static_cast<std::size_t>(std::clamp<std::int64_t>(first + k, 0, static_cast<std::int64_t>(n) - 1)));
  return idx;
}

/// Input/output transforms applied around an external model.
struct ModelIO {
  bool trained_on_normalized_data = false;
  bool normalize_2d = true;
  bool normalize_3d = true;
  std::optional<ZScoreStats> stats_2d;
  std::optional<ZScoreStats> stats_3d;
  int root = 0;

  /// Without normalized training, keypoints go out screen-normalized;
  /// otherwise z-scored when normalize_2d is set.
  Joints2 prepare(const Joints2& kp, const CameraModel& cam) const {
    if (trained_on_normalized_data && normalize_2d) {
      if (!stats_2d) throw Error(ErrorClass::internal, "2D statistics not computed");
      return zscore(kp, *stats_2d);
    }
    return screen_normalize(kp, cam.width, cam.height);
  }

  /// Model output back to hip-centered millimeters.
  Joints3 finish(const Joints3& out) const {
    Joints3 mm = out;
    if (trained_on_normalized_data && normalize_3d) {
      if (!stats_3d) throw Error(ErrorClass::internal, "3D statistics not computed");
      mm = zscore_inverse(out, *stats_3d);
    }
    return hip_center(mm, root);
  }
};

struct SessionConfig {
  std::vector<std::string> command;
  int num_joints = 16;
  bool video_mode = false;
  int num_frames = 1;
  bool trained_on_normalized_data = false;
  std::chrono::milliseconds timeout{30000};
};

struct Handshake {
  int protocol = 0;
  int num_joints = 0;
  bool video_mode = false;
  int num_frames = 1;
  std::optional<bool> trained_on_normalized_data;
};

inline constexpr int kProtocolVersion = 1;

namespace detail {

inline Joints3 parse_joints(const nlohmann::json& j, int num_joints) {
  if (!j.is_array() || static_cast<int>(j.size()) != num_joints) return {};
  Joints3 out(num_joints, 3);
  for (int r = 0; r < num_joints; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || row.size() != 3) return {};
    for (int c = 0; c < 3; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) return {};
      out(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  if (!all_finite(out)) return {};
  return out;
}

}  // namespace detail

/// One external model process speaking newline-delimited JSON on its
/// stdin/stdout. Not thread-safe; use one session per worker.
class ModelSession {
 public:
  ModelSession(const ModelSession&) = delete;
  ModelSession& operator=(const ModelSession&) = delete;
  ModelSession(ModelSession&& o) noexcept { *this = std::move(o); }
  ModelSession& operator=(ModelSession&& o) noexcept {
    if (this != &o) {
      shutdown();
      cfg_ = std::move(o.cfg_);
      hs_ = o.hs_;
      pid_ = std::exchange(o.pid_, -1);
      to_child_ = std::exchange(o.to_child_, -1);
      from_child_ = std::exchange(o.from_child_, -1);
      inbuf_ = std::move(o.inbuf_);
      next_id_ = o.next_id_;
    }
    return *this;
  }
  ~ModelSession() { shutdown(); }

  /// Spawns `cfg.command` and validates its handshake against `cfg`.
  static ModelSession start(const SessionConfig& cfg) {
    if (cfg.command.empty()) throw PredictionError(PredictionError::Kind::spawn, "empty command");
    ::signal(SIGPIPE, SIG_IGN);
    int in[2], out[2];
    if (::pipe2(in, O_CLOEXEC) != 0) throw PredictionError(PredictionError::Kind::spawn, std::strerror(errno));
    if (::pipe2(out, O_CLOEXEC) != 0) {
      ::close(in[0]);
      ::close(in[1]);
      throw PredictionError(PredictionError::Kind::spawn, std::strerror(errno));
    }
    std::vector<char*> argv;
    for (const auto& a : cfg.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw PredictionError(PredictionError::Kind::spawn, std::strerror(errno));
    if (pid == 0) {
      ::dup2(in[0], STDIN_FILENO);
      ::dup2(out[1], STDOUT_FILENO);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(in[0]);
    ::close(out[1]);
    ModelSession s;
    s.cfg_ = cfg;
    s.pid_ = pid;
    s.to_child_ = in[1];
    s.from_child_ = out[0];
    ::fcntl(s.to_child_, F_SETFL, ::fcntl(s.to_child_, F_GETFL) | O_NONBLOCK);
    s.read_handshake();
    return s;
  }

  const Handshake& handshake() const { return hs_; }
  const SessionConfig& config() const { return cfg_; }

  /// One request, one response.
  Joints3 infer(const std::vector<Joints2>& window) { return infer_batch({window}).front(); }

  /// Sends every request before waiting on any reply; replies may arrive in
  /// any order and are matched back by id.
  std::vector<Joints3> infer_batch(const std::vector<std::vector<Joints2>>& windows) {
    std::string outbuf;
    std::unordered_map<std::int64_t, std::size_t> pending;
    const std::int64_t first_id = next_id_;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const std::int64_t id = next_id_++;
      outbuf += encode_request(id, windows[i]);
      pending.emplace(id, i);
    }
    std::vector<Joints3> results(windows.size());
    std::size_t written = 0;
    auto oldest = [&] {
      std::int64_t m = next_id_;
      for (const auto& [id, _] : pending) m = std::min(m, id);
      return m;
    };

    while (!pending.empty()) {
      pollfd fds[2] = {{from_child_, POLLIN, 0}, {to_child_, POLLOUT, 0}};
      const nfds_t nfds = written < outbuf.size() ? 2 : 1;
      const int rc = ::poll(fds, nfds, static_cast<int>(cfg_.timeout.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw PredictionError(PredictionError::Kind::child_exit, std::strerror(errno), oldest());
      }
      if (rc == 0)
        throw PredictionError(PredictionError::Kind::timeout,
                              "no progress for " + std::to_string(cfg_.timeout.count()) + " ms", oldest());
      if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t n = ::write(to_child_, outbuf.data() + written, outbuf.size() - written);
        if (n > 0) written += static_cast<std::size_t>(n);
        else if (n < 0 && errno != EAGAIN && errno != EINTR)
          throw PredictionError(PredictionError::Kind::child_exit, "stdin closed: " + exit_status(), oldest());
      }
      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        if (!fill_buffer()) throw PredictionError(PredictionError::Kind::child_exit, exit_status(), oldest());
        std::string line;
        while (take_line(line)) {
          nlohmann::json msg = nlohmann::json::parse(line, nullptr, false);
          if (msg.is_discarded() || !msg.is_object())
            throw PredictionError(PredictionError::Kind::malformed, "unparsable response line", oldest());
          if (!msg.contains("id") || !msg["id"].is_number_integer())
            throw PredictionError(PredictionError::Kind::malformed, "response without integer id", oldest());
          const auto id = msg["id"].get<std::int64_t>();
          auto it = pending.find(id);
          if (it == pending.end())
            throw PredictionError(PredictionError::Kind::malformed,
                                  id >= first_id && id < next_id_ ? "duplicate response" : "response to unknown id", id);
          Joints3 joints = msg.contains("joints") ? detail::parse_joints(msg["joints"], cfg_.num_joints) : Joints3();
          if (joints.rows() == 0)
            throw PredictionError(PredictionError::Kind::malformed,
                                  "joints must be a finite " + std::to_string(cfg_.num_joints) + "x3 array", id);
          results[it->second] = std::move(joints);
          pending.erase(it);
        }
      }
    }
    return results;
  }

 private:
  ModelSession() = default;

  std::string encode_request(std::int64_t id, const std::vector<Joints2>& window) const {
    if (static_cast<int>(window.size()) != cfg_.num_frames)
      throw Error(ErrorClass::internal, "window has " + std::to_string(window.size()) + " frames, session expects " +
                                            std::to_string(cfg_.num_frames));
    nlohmann::json kp = nlohmann::json::array();
    for (const auto& frame : window) {
      if (frame.rows() != cfg_.num_joints) throw ShapeError("request frame joint count");
      nlohmann::json f = nlohmann::json::array();
      for (Eigen::Index r = 0; r < frame.rows(); ++r) f.push_back({frame(r, 0), frame(r, 1)});
      kp.push_back(std::move(f));
    }
    return nlohmann::json{{"id", id}, {"keypoints", std::move(kp)}}.dump() + "\n";
  }

  void read_handshake() {
    const auto deadline = std::chrono::steady_clock::now() + cfg_.timeout;
    std::string line;
    while (!take_line(line)) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw PredictionError(PredictionError::Kind::timeout, "no handshake within timeout");
      pollfd fd{from_child_, POLLIN, 0};
      const int rc = ::poll(&fd, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno == EINTR) continue;
      if (rc == 0) throw PredictionError(PredictionError::Kind::timeout, "no handshake within timeout");
      if (!fill_buffer()) throw PredictionError(PredictionError::Kind::child_exit, "before handshake: " + exit_status());
    }
    const nlohmann::json h = nlohmann::json::parse(line, nullptr, false);
    auto need_int = [&](const char* key) {
      if (!h.contains(key) || !h[key].is_number_integer())
        throw PredictionError(PredictionError::Kind::handshake, std::string("missing integer '") + key + "'");
      return h[key].get<int>();
    };
    if (h.is_discarded() || !h.is_object()) throw PredictionError(PredictionError::Kind::handshake, "not a JSON object");
    hs_.protocol = need_int("protocol");
    hs_.num_joints = need_int("num_joints");
    hs_.num_frames = h.contains("num_frames") ? need_int("num_frames") : 1;
    if (!h.contains("video_mode") || !h["video_mode"].is_boolean())
      throw PredictionError(PredictionError::Kind::handshake, "missing boolean 'video_mode'");
    hs_.video_mode = h["video_mode"].get<bool>();
    if (h.contains("trained_on_normalized_data")) {
      if (!h["trained_on_normalized_data"].is_boolean())
        throw PredictionError(PredictionError::Kind::handshake, "'trained_on_normalized_data' must be boolean");
      hs_.trained_on_normalized_data = h["trained_on_normalized_data"].get<bool>();
    }

    auto mismatch = [](const std::string& key, const std::string& got, const std::string& want) {
      throw PredictionError(PredictionError::Kind::handshake, key + " declared " + got + ", run expects " + want);
    };
    if (hs_.protocol != kProtocolVersion) mismatch("protocol", std::to_string(hs_.protocol), std::to_string(kProtocolVersion));
    if (hs_.num_joints != cfg_.num_joints)
      mismatch("num_joints", std::to_string(hs_.num_joints), std::to_string(cfg_.num_joints));
    if (hs_.video_mode != cfg_.video_mode)
      mismatch("video_mode", hs_.video_mode ? "true" : "false", cfg_.video_mode ? "true" : "false");
    if (hs_.num_frames != cfg_.num_frames)
      mismatch("num_frames", std::to_string(hs_.num_frames), std::to_string(cfg_.num_frames));
    if (hs_.trained_on_normalized_data && *hs_.trained_on_normalized_data != cfg_.trained_on_normalized_data)
      mismatch("trained_on_normalized_data", *hs_.trained_on_normalized_data ? "true" : "false",
               cfg_.trained_on_normalized_data ? "true" : "false");
  }

  // False on EOF.
  bool fill_buffer() {
    char buf[65536];
    for (;;) {
      const ssize_t n = ::read(from_child_, buf, sizeof buf);
      if (n > 0) {
        inbuf_.append(buf, static_cast<std::size_t>(n));
        return true;
      }
      if (n == 0) return false;
      if (errno != EINTR) return false;
    }
  }

  bool take_line(std::string& line) {
    const auto nl = inbuf_.find('\n');
    if (nl == std::string::npos) return false;
    line.assign(inbuf_, 0, nl);
    inbuf_.erase(0, nl + 1);
    return true;
  }

  std::string exit_status() {
    if (pid_ <= 0) return "no process";
    int status = 0;
    for (int i = 0; i < 100; ++i) {
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        pid_ = -1;
        if (WIFEXITED(status)) return "exit status " + std::to_string(WEXITSTATUS(status));
        if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
        return "terminated";
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return "output closed";
  }

  void shutdown() noexcept {
    if (to_child_ >= 0) ::close(std::exchange(to_child_, -1));
    if (from_child_ >= 0) ::close(std::exchange(from_child_, -1));
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  SessionConfig cfg_;
  Handshake hs_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string inbuf_;
  std::int64_t next_id_ = 0;
};

inline ModelSession external_session(const SessionConfig& cfg) { return ModelSession::start(cfg); }

inline Joints3 infer(ModelSession& session, const std::vector<Joints2>& window) { return session.infer(window); }

}  // namespace poseval
