#include "cascade/schedule.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cascade/common.hpp"

using nlohmann::json;

namespace cascade {

Protocol parse_protocol(const std::string& name) {
    if (name == "baseline") return Protocol::baseline;
    if (name == "naive") return Protocol::naive;
    if (name == "freeze_encoder") return Protocol::freeze_encoder;
    if (name == "hier_freeze") return Protocol::hier_freeze;
    if (name == "hier_unfreeze") return Protocol::hier_unfreeze;
    throw ConfigError("unknown protocol '" + name +
                      "' (expected baseline|naive|freeze_encoder|hier_freeze|hier_unfreeze)");
}

std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::baseline: return "baseline";
        case Protocol::naive: return "naive";
        case Protocol::freeze_encoder: return "freeze_encoder";
        case Protocol::hier_freeze: return "hier_freeze";
        case Protocol::hier_unfreeze: return "hier_unfreeze";
    }
    throw ConfigError("invalid protocol value");
}

std::vector<Protocol> all_protocols() {
    return {Protocol::baseline, Protocol::naive, Protocol::hier_freeze, Protocol::freeze_encoder,
            Protocol::hier_unfreeze};
}

Schedule build_schedule(Protocol protocol, int encoder_blocks, double lr0, int epochs_per_phase,
                        int patience, bool cumulative) {
    if (encoder_blocks != 5)
        throw ConfigError("build_schedule: encoder_blocks must be 5, got " +
                          std::to_string(encoder_blocks));
    if (!(lr0 > 0)) throw ConfigError("build_schedule: lr0 must be positive");
    if (epochs_per_phase < 1 || patience < 1)
        throw ConfigError("build_schedule: epochs_per_phase and patience must be positive");

    Schedule s;
    s.protocol = protocol;
    s.transfer_init = protocol != Protocol::baseline;
    auto phase = [&](std::set<int> frozen) {
        s.phases.push_back(Phase{std::move(frozen), lr0, epochs_per_phase, patience});
    };

    switch (protocol) {
        case Protocol::baseline:
        case Protocol::naive:
            phase({});
            break;
        case Protocol::freeze_encoder:
            phase({1, 2, 3, 4, 5});
            break;
        case Protocol::hier_freeze: {
            phase({});
            std::set<int> frozen;
            for (int b = 1; b <= encoder_blocks - 1; ++b) {
                if (cumulative)
                    frozen.insert(b);
                else
                    frozen = {b};
                phase(frozen);
            }
            break;
        }
        case Protocol::hier_unfreeze: {
            // bottom-up unfreezing is inherently cumulative
            std::set<int> frozen;
            for (int b = 1; b <= encoder_blocks; ++b) frozen.insert(b);
            phase(frozen);
            for (int b = encoder_blocks; b >= 1; --b) {
                frozen.erase(b);
                phase(frozen);
            }
            break;
        }
    }
    if (cumulative)
        validate_schedule(s, encoder_blocks);
    else
        validate_schedule_basic(s, encoder_blocks);
    return s;
}

void validate_schedule_basic(const Schedule& s, int encoder_blocks) {
    if (s.phases.empty()) throw ConfigError("schedule: phase list is empty");
    for (const auto& ph : s.phases) {
        if (!(ph.lr0 > 0)) throw ConfigError("schedule: phase lr0 must be positive");
        if (ph.max_epochs < 1 || ph.patience < 1)
            throw ConfigError("schedule: phase epochs and patience must be positive");
        for (int b : ph.frozen_blocks)
            if (b < 1 || b > encoder_blocks)
                throw ConfigError("schedule: frozen block " + std::to_string(b) +
                                  " outside encoder range 1.." + std::to_string(encoder_blocks));
    }
}

void validate_schedule(const Schedule& s, int encoder_blocks) {
    validate_schedule_basic(s, encoder_blocks);
    auto includes = [](const std::set<int>& big, const std::set<int>& small) {
        return std::includes(big.begin(), big.end(), small.begin(), small.end());
    };
    if (s.protocol == Protocol::hier_freeze) {
        for (std::size_t i = 1; i < s.phases.size(); ++i)
            if (!includes(s.phases[i].frozen_blocks, s.phases[i - 1].frozen_blocks) ||
                s.phases[i].frozen_blocks == s.phases[i - 1].frozen_blocks)
                throw ConfigError("schedule: hier_freeze frozen sets must strictly grow");
    }
    if (s.protocol == Protocol::hier_unfreeze) {
        for (std::size_t i = 1; i < s.phases.size(); ++i)
            if (!includes(s.phases[i - 1].frozen_blocks, s.phases[i].frozen_blocks) ||
                s.phases[i].frozen_blocks == s.phases[i - 1].frozen_blocks)
                throw ConfigError("schedule: hier_unfreeze frozen sets must strictly shrink");
        if (!s.phases.back().frozen_blocks.empty())
            throw ConfigError("schedule: hier_unfreeze must end with everything trainable");
    }
}

double lr_at_epoch(double lr0, int epoch) {
    if (!(lr0 > 0)) throw ConfigError("lr_at_epoch: lr0 must be positive");
    if (epoch < 0) throw ConfigError("lr_at_epoch: epoch must be non-negative");
    return std::max(lr0 * std::pow(0.9, epoch / 2), 1e-8);
}

std::string schedule_to_json(const Schedule& s) {
    json j;
    j["protocol"] = protocol_name(s.protocol);
    j["transfer_init"] = s.transfer_init;
    j["phases"] = json::array();
    for (const auto& ph : s.phases)
        j["phases"].push_back(json{{"frozen_blocks", ph.frozen_blocks},
                                   {"lr0", ph.lr0},
                                   {"max_epochs", ph.max_epochs},
                                   {"patience", ph.patience}});
    return j.dump(2);
}

Schedule schedule_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("schedule JSON parse failure: ") + e.what());
    }
    Schedule s;
    s.protocol = parse_protocol(j.at("protocol").get<std::string>());
    s.transfer_init = j.at("transfer_init").get<bool>();
    for (const auto& jp : j.at("phases")) {
        Phase ph;
        for (int b : jp.at("frozen_blocks").get<std::vector<int>>()) ph.frozen_blocks.insert(b);
        ph.lr0 = jp.at("lr0").get<double>();
        ph.max_epochs = jp.at("max_epochs").get<int>();
        ph.patience = jp.at("patience").get<int>();
        s.phases.push_back(std::move(ph));
    }
    validate_schedule(s, 5);
    return s;
}

}  // namespace cascade
