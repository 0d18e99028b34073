#pragma once

// Chat-completion client for prompt decomposition. Sends a fixed system
// prompt plus the user text to an OpenAI-style endpoint, parses the numbered
// list in the reply, and falls back to the rule-based splitter when the
// network or the reply cannot be used. Configuration comes from the
// KINETA_LLM_ENDPOINT / KINETA_LLM_KEY / KINETA_LLM_MODEL environment
// variables.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "kineta/core.hpp"
#include "kineta/text.hpp"

namespace kineta::text {

constexpr const char* kDecompositionSystemPrompt =
    "You are a highly specialized assistant designed to analyze and process textual descriptions of human "
    "actions. Your primary function is to decompose these descriptions into fine-grained actions arranged "
    "chronologically. Focus on detecting and interpreting sequence markers like 'then,' 'twice,' 'again,' "
    "and other words indicating repetitions or transitions. Ensure that your decomposition explicitly "
    "outlines: 1. The initial state of the posture or action. 2. Detailed intermediate steps. 3. The final "
    "state.";

struct LlmClientConfig {
    std::string endpoint; // http(s)://host[:port]/path
    std::string api_key;
    std::string model = "gpt-4o-mini";
    int max_retries = 3;
    int timeout_seconds = 30;
    int backoff_ms = 250;

    static LlmClientConfig from_env() {
        LlmClientConfig cfg;
        if (const char* e = std::getenv("KINETA_LLM_ENDPOINT")) cfg.endpoint = e;
        if (const char* k = std::getenv("KINETA_LLM_KEY")) cfg.api_key = k;
        if (const char* m = std::getenv("KINETA_LLM_MODEL")) cfg.model = m;
        return cfg;
    }
};

namespace detail {

struct SplitUrl {
    std::string base; // scheme://host:port
    std::string path;
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("llm: endpoint must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.base = url;
        out.path = "/v1/chat/completions";
    } else {
        out.base = url.substr(0, path_start);
        out.path = url.substr(path_start);
    }
    return out;
}

// Splits "1. walk 2. squat" or one-item-per-line numbered lists.
inline std::vector<std::string> parse_numbered_list(const std::string& content) {
    struct Marker {
        size_t start, text_start;
    };
    std::vector<Marker> marks;
    for (size_t i = 0; i < content.size(); ++i) {
        if (!(content[i] >= '0' && content[i] <= '9')) continue;
        if (i > 0 && content[i - 1] != ' ' && content[i - 1] != '\n' && content[i - 1] != '\t' &&
            content[i - 1] != '\r')
            continue;
        size_t j = i;
        while (j < content.size() && content[j] >= '0' && content[j] <= '9') ++j;
        if (j < content.size() && (content[j] == '.' || content[j] == ')')) {
            size_t k = j + 1;
            while (k < content.size() && (content[k] == ' ' || content[k] == '\t')) ++k;
            marks.push_back({i, k});
            i = j;
        }
    }
    std::vector<std::string> items;
    for (size_t m = 0; m < marks.size(); ++m) {
        size_t end = m + 1 < marks.size() ? marks[m + 1].start : content.size();
        std::string item = trim(content.substr(marks[m].text_start, end - marks[m].text_start));
        while (!item.empty() && (item.back() == '.' || item.back() == ',' || item.back() == ';')) item.pop_back();
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

}  // namespace text::detail

// Decompose via the configured chat endpoint; transient failures retry with
// exponential backoff, and any terminal failure falls back to the rule-based
// splitter (source records which path produced the result).
inline DecomposedPrompt decompose_llm(const std::string& full_text, const LlmClientConfig& cfg) {
    if (trim(full_text).empty()) throw ValidationError("decompose: empty prompt");
    if (cfg.endpoint.empty()) return decompose_rules(full_text);

    nlohmann::json body{{"model", cfg.model},
                        {"messages", nlohmann::json::array({
                                         nlohmann::json{{"role", "system"}, {"content", kDecompositionSystemPrompt}},
                                         nlohmann::json{{"role", "user"}, {"content", full_text}},
                                     })}};

    auto url = detail::split_url(cfg.endpoint);
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms * (1 << (attempt - 1))));
        httplib::Client client(url.base);
        client.set_connection_timeout(cfg.timeout_seconds, 0);
        client.set_read_timeout(cfg.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
        auto res = client.Post(url.path, headers, body.dump(), "application/json");
        if (!res || res->status >= 500) continue; // transient
        if (res->status != 200) break;            // terminal HTTP error
        try {
            auto reply = nlohmann::json::parse(res->body);
            std::string content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
            auto items = detail::parse_numbered_list(content);
            if (items.empty()) break; // unparseable reply
            if (items.size() > size_t(kMaxParts)) items.resize(size_t(kMaxParts));
            DecomposedPrompt out;
            out.full_text = full_text;
            out.parts = std::move(items);
            out.source = PromptSource::llm;
            out.validate();
            return out;
        } catch (const std::exception&) {
            break; // malformed reply payload
        }
    }
    return decompose_rules(full_text);
}

}  // namespace kineta::text
