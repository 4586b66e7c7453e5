#pragma once
// HTTP chat provider speaking the JSON chat-completion wire protocol:
//
//   POST {base_url}/v1/chat/completions
//   request  {"model", "messages": [{"role", "content"}], "max_tokens", "temperature"}
//   response {"choices": [{"message": {"content"}}], "usage": {"prompt_tokens", "completion_tokens"}}
//
// The API key is read from MERGE_API_KEY when not set explicitly. Connection
// failures surface as retryable transport errors; HTTP error statuses as
// provider errors carrying the status.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "merge/error.hpp"
#include "merge/gateways.hpp"

namespace merge {

struct HttpChatConfig {
    std::string base_url = "http://127.0.0.1:8080";
    std::string model = "default";
    std::string api_key;  // falls back to MERGE_API_KEY
    std::string path = "/v1/chat/completions";
    int timeout_seconds = 120;
};

class HttpChatProvider : public ChatProvider {
public:
    explicit HttpChatProvider(HttpChatConfig config) : cfg_(std::move(config)) {
        if (cfg_.api_key.empty()) {
            if (const char* env = std::getenv("MERGE_API_KEY")) cfg_.api_key = env;
        }
    }

    ChatResult complete(const ChatRequest& request) override {
        request.validate();
        nlohmann::ordered_json body;
        body["model"] = cfg_.model;
        auto messages = nlohmann::ordered_json::array();
        for (const auto& m : request.messages) {
            std::string content;
            for (const auto& p : m.parts) {
                if (!content.empty()) content += '\n';
                if (const auto* t = std::get_if<TextPart>(&p))
                    content += t->text;
                else if (const auto* i = std::get_if<ImageRefPart>(&p))
                    content += "[image: " + i->image_ref + "]";
            }
            messages.push_back({{"role", m.role == Role::system ? "system" : "user"},
                                {"content", std::move(content)}});
        }
        body["messages"] = std::move(messages);
        body["max_tokens"] = request.max_output_tokens;
        body["temperature"] = request.temperature;

        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(cfg_.timeout_seconds, 0);
        client.set_read_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + cfg_.api_key);

        auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
        if (!res)
            throw Error(ErrorKind::transport,
                        "chat completion request to " + cfg_.base_url + " failed: " +
                            httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300) {
            Error e(ErrorKind::provider,
                    "chat provider returned status " + std::to_string(res->status));
            e.set_status(res->status);
            e.set_raw(res->body);
            throw e;
        }

        nlohmann::json payload;
        try {
            payload = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            Error err(ErrorKind::provider,
                      "chat provider response is not valid JSON: " + std::string(e.what()));
            err.set_raw(res->body);
            throw err;
        }
        ChatResult result;
        try {
            result.text = payload.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            Error err(ErrorKind::provider, "chat provider response lacks choices[0].message.content");
            err.set_raw(res->body);
            throw err;
        }
        if (payload.contains("usage") && payload["usage"].is_object()) {
            result.usage.prompt_tokens = payload["usage"].value("prompt_tokens", 0u);
            result.usage.output_tokens = payload["usage"].value("completion_tokens", 0u);
        }
        return result;
    }

    std::string name() const override { return "http:" + cfg_.base_url; }

private:
    HttpChatConfig cfg_;
};

}  // namespace merge
