#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "semiicl/embedspace.hpp"
#include "semiicl/lm_backend.hpp"
#include "semiicl/util.hpp"

namespace semiicl {

// Chat-completions client against the de-facto OpenAI-style schema.
// Concurrency is capped by a counting semaphore; transient failures
// (transport errors, 429, 5xx) retry with exponential backoff.
class RemoteLm : public LmBackend {
public:
    explicit RemoteLm(BackendConfig cfg, std::string transcript_path = {})
        : cfg_(std::move(cfg)),
          client_(cfg_.base_url),
          inflight_(cfg_.max_inflight),
          transcript_path_(std::move(transcript_path)) {
        cfg_.validate();
        if (cfg_.base_url.empty())
            throw ConfigError("RemoteLm: base_url required");
        client_.set_read_timeout(120, 0);
        if (!cfg_.api_key_env.empty()) {
            const char* key = std::getenv(cfg_.api_key_env.c_str());
            if (key) api_key_ = key;
        }
    }

    LmResult complete(const LmRequest& req) override {
        if (req.prompt.empty()) throw ConfigError("RemoteLm: empty prompt");
        nlohmann::json body = {
            {"model", cfg_.model},
            {"messages",
             nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
            {"temperature", req.temperature},
            {"max_tokens", cfg_.max_tokens},
        };
        if (req.want_logprobs) body["logprobs"] = true;

        std::string payload = body.dump();
        int backoff = cfg_.retry.backoff_ms;
        std::string last_error;
        for (int attempt = 0; attempt < std::max(1, cfg_.retry.attempts); ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            httplib::Result res = post(payload);
            if (!res) {
                last_error = "transport failure";
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw ProtocolError("RemoteLm: unexpected status " +
                                    std::to_string(res->status));
            LmResult out = parse_payload(res->body);
            log_transcript(payload, res->body);
            return out;
        }
        throw TransportError("RemoteLm: retries exhausted (" + last_error + ")");
    }

    std::string identity() const override {
        return "remote:" + cfg_.base_url + "/" + cfg_.model;
    }

private:
    httplib::Result post(const std::string& payload) {
        inflight_.acquire();
        httplib::Headers headers;
        if (!api_key_.empty())
            headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client_.Post("/v1/chat/completions", headers, payload,
                                "application/json");
        inflight_.release();
        return res;
    }

    static LmResult parse_payload(const std::string& body) {
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded())
            throw ProtocolError("RemoteLm: response is not valid JSON");
        try {
            const auto& choice = j.at("choices").at(0);
            LmResult out;
            out.text = choice.at("message").at("content").get<std::string>();
            if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
                choice["logprobs"].contains("content")) {
                std::vector<TokenLogprob> lps;
                for (const auto& t : choice["logprobs"]["content"])
                    lps.push_back({t.at("token").get<std::string>(),
                                   t.at("logprob").get<double>()});
                out.logprobs = std::move(lps);
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("RemoteLm: malformed payload: ") +
                                e.what());
        }
    }

    void log_transcript(const std::string& request, const std::string& response) {
        if (transcript_path_.empty()) return;
        std::lock_guard<std::mutex> lk(transcript_mu_);
        std::ofstream f(transcript_path_, std::ios::app);
        nlohmann::json line = {{"request", request}, {"response", response}};
        f << line.dump() << "\n";
    }

    BackendConfig cfg_;
    httplib::Client client_;
    std::counting_semaphore<256> inflight_;
    std::string api_key_;
    std::string transcript_path_;
    std::mutex transcript_mu_;
};

// Remote embedding provider (OpenAI-style /v1/embeddings schema).
class RemoteEmbedder : public Embedder {
public:
    RemoteEmbedder(std::string base_url, std::string model, int dim,
                   std::string api_key_env = {})
        : base_url_(std::move(base_url)),
          model_(std::move(model)),
          dim_(dim),
          client_(base_url_) {
        if (!api_key_env.empty()) {
            const char* key = std::getenv(api_key_env.c_str());
            if (key) api_key_ = key;
        }
    }

    Vec embed(const std::string& text) override {
        nlohmann::json body = {{"model", model_}, {"input", text}};
        httplib::Headers headers;
        if (!api_key_.empty())
            headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client_.Post("/v1/embeddings", headers, body.dump(),
                                "application/json");
        if (!res || res->status != 200)
            throw TransportError("RemoteEmbedder: request failed");
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded())
            throw ProtocolError("RemoteEmbedder: response is not valid JSON");
        try {
            Vec v = j.at("data").at(0).at("embedding").get<Vec>();
            if (static_cast<int>(v.size()) != dim_)
                throw ProtocolError("RemoteEmbedder: unexpected dimension");
            return v;
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("RemoteEmbedder: malformed payload: ") +
                                e.what());
        }
    }

    int dim() const override { return dim_; }
    std::string identity() const override { return "remote:" + model_; }

private:
    std::string base_url_;
    std::string model_;
    int dim_;
    httplib::Client client_;
    std::string api_key_;
};

}  // namespace semiicl
