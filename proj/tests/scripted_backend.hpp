#pragma once

#include <string>
#include <vector>

#include "floodvision/vlm.hpp"

/// Returns canned replies in order; throws a transport error once exhausted.
class ScriptedBackend : public floodvision::vlm::VlmBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}

    std::string complete(const floodvision::vlm::ImagePayload&,
                         const floodvision::vlm::PromptSpec&) override {
        const std::size_t i = calls++;
        if (i >= replies_.size()) throw floodvision::vlm::TransportError("scripted backend exhausted");
        return replies_[i];
    }

    int calls = 0;

private:
    std::vector<std::string> replies_;
};
