#pragma once

// JSON API for the review console. Every request reloads the run from disk
// under that run's mutex, so the CLI and the server can share a workspace.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>

#include <nlohmann/json.hpp>

#include "act/detail/httplib.hpp"
#include "act/error.hpp"
#include "act/orchestrator/run.hpp"

namespace act {

namespace detail {

inline bool safe_run_id(const std::string& id) {
  static const std::regex ok("[A-Za-z0-9._-]+");
  return std::regex_match(id, ok) && id != "." && id != "..";
}

inline std::string mime_for(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}, {"status", status}});
}

}  // namespace detail

class ReviewServer {
 public:
  explicit ReviewServer(fs::path workspace, std::optional<fs::path> static_dir = std::nullopt)
      : workspace_(std::move(workspace)) {
    if (static_dir && !server_.set_mount_point("/", static_dir->string()))
      throw ValidationError("static directory " + static_dir->string() + " does not exist");
    routes();
  }

  httplib::Server& server() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

 private:
  std::mutex& run_mutex(const std::string& id) {
    std::lock_guard lock(registry_);
    auto& m = locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  fs::path run_dir(const std::string& id) const {
    if (!detail::safe_run_id(id) || !fs::exists(workspace_ / id / "manifest.json"))
      throw NotFoundError("no run '" + id + "'");
    return workspace_ / id;
  }

  /// Maps library exceptions to status codes.
  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const NotFoundError& e) {
      detail::send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      detail::send_error(res, 409, e.what());
    } catch (const StageError& e) {
      detail::send_error(res, 409, e.what());
    } catch (const ValidationError& e) {
      detail::send_error(res, 400, e.what());
    } catch (const ParseError& e) {
      detail::send_error(res, 400, e.what());
    } catch (const json::exception& e) {
      detail::send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      detail::send_error(res, 500, e.what());
    }
  }

  static int int_param(const httplib::Request& req, const char* name, int fallback) {
    if (!req.has_param(name)) return fallback;
    const std::string v = req.get_param_value(name);
    try {
      std::size_t used = 0;
      const int out = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ValidationError(std::string("query parameter ") + name + " must be an integer");
    }
  }

  void routes() {
    server_.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        json runs = json::array();
        if (fs::exists(workspace_)) {
          std::vector<fs::path> dirs;
          for (const auto& e : fs::directory_iterator(workspace_))
            if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
          std::sort(dirs.begin(), dirs.end());
          for (const auto& d : dirs) {
            std::lock_guard lock(run_mutex(d.filename().string()));
            runs.push_back(PipelineRun::load(d).state());
          }
        }
        detail::send_json(res, 200, json{{"runs", runs}});
      });
    });

    server_.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const fs::path dir = run_dir(id);
        std::lock_guard lock(run_mutex(id));
        const auto run = PipelineRun::load(dir);
        detail::send_json(res, 200, json{{"state", run.state()}, {"config", run.config()}});
      });
    });

    server_.Get(R"(/runs/([^/]+)/queue)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const fs::path dir = run_dir(id);
        const int page = int_param(req, "page", 1);
        const int size = int_param(req, "page_size", 20);
        std::lock_guard lock(run_mutex(id));
        auto run = PipelineRun::load(dir);
        detail::send_json(res, 200, run.queue(page, size));
      });
    });

    server_.Post(R"(/runs/([^/]+)/reviews)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const fs::path dir = run_dir(id);
        const json body = json::parse(req.body);
        if (!body.is_object() || !body.contains("item_id") || !body.contains("label"))
          throw ValidationError("body needs item_id and label");
        if (!body.at("item_id").is_number_integer() || !body.at("label").is_number_integer())
          throw ValidationError("item_id and label must be integers");
        const std::string reviewer = body.value("reviewer", std::string("console"));
        std::lock_guard lock(run_mutex(id));
        auto run = PipelineRun::load(dir);
        const int item = body.at("item_id").get<int>();
        if (item < 0 || static_cast<std::size_t>(item) >= run.dataset().size())
          throw NotFoundError("no item with id " + std::to_string(item));
        const RunState s = run.submit_review(item, body.at("label").get<Label>(), reviewer);
        detail::send_json(res, 201, json{{"state", s}});
      });
    });

    server_.Get(R"(/runs/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const fs::path dir = run_dir(id);
        std::lock_guard lock(run_mutex(id));
        const auto run = PipelineRun::load(dir);
        const ExportBundle b = run.export_run();
        b.write_to(dir / "export");
        json body{{"corrected", json::array()}, {"metrics", json::parse(b.metrics_json)}};
        std::istringstream lines(b.corrected_jsonl);
        for (std::string line; std::getline(lines, line);)
          if (!line.empty()) body["corrected"].push_back(json::parse(line));
        if (!b.budget_curve_csv.empty()) body["budget_curve_csv"] = b.budget_curve_csv;
        detail::send_json(res, 200, body);
      });
    });

    // Item content for display: image bytes for image and vqa items, plain
    // text for text items, or the JSON record with format=json.
    server_.Get(R"(/items/(-?\d+)/content)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("run")) throw ValidationError("query parameter run is required");
        const std::string id = req.get_param_value("run");
        const fs::path dir = run_dir(id);
        std::lock_guard lock(run_mutex(id));
        const auto run = PipelineRun::load(dir);
        const Item& it = run.dataset().at(std::stoi(req.matches[1]));
        if (req.has_param("format") && req.get_param_value("format") == "json") {
          detail::send_json(res, 200,
                            json{{"item_id", it.id}, {"content", it.content}, {"label_space", it.label_space}});
          return;
        }
        if (it.content.kind == ContentKind::text) {
          res.status = 200;
          res.set_content(it.content.text, "text/plain; charset=utf-8");
          return;
        }
        {
          std::ifstream in(it.content.image_path, std::ios::binary);
          if (!in) throw NotFoundError("image not found: " + it.content.image_path);
          std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
          res.status = 200;
          res.set_content(bytes, detail::mime_for(it.content.image_path));
        }
      });
    });
  }

  fs::path workspace_;
  httplib::Server server_;
  std::mutex registry_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

}  // namespace act
