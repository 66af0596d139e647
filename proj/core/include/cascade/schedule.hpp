#pragma once

#include <set>
#include <string>
#include <vector>

namespace cascade {

/// Fine-tuning protocols. `baseline` trains from random init (no weight
/// transfer); all others start from the pretrained segmentation weights.
enum class Protocol { baseline, naive, freeze_encoder, hier_freeze, hier_unfreeze };

/// Throws ConfigError on unknown names.
Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

/// All protocols in report row order.
std::vector<Protocol> all_protocols();

struct Phase {
    std::set<int> frozen_blocks;  // subset of encoder blocks {1..5}
    double lr0 = 5e-5;
    int max_epochs = 20;
    int patience = 5;
};

struct Schedule {
    Protocol protocol = Protocol::naive;
    std::vector<Phase> phases;
    bool transfer_init = true;  // false only for baseline
};

/// Compiles a protocol into its phase list:
///   baseline       1 phase, frozen {} (random init)
///   naive          1 phase, frozen {}
///   freeze_encoder 1 phase, frozen {1,2,3,4,5}
///   hier_freeze    5 phases, frozen {} {1} {1,2} {1,2,3} {1,2,3,4}
///   hier_unfreeze  6 phases, frozen {1..5} {1..4} {1..3} {1,2} {1} {}
/// `cumulative = false` switches hier_freeze to the sliding one-block-at-a-
/// time variant ({1} {2} {3} {4} after the first phase); hier_unfreeze is
/// cumulative by construction.
Schedule build_schedule(Protocol protocol, int encoder_blocks, double lr0, int epochs_per_phase,
                        int patience, bool cumulative = true);

/// Checks phase invariants (frozen sets within {1..encoder_blocks}, the
/// hierarchical monotonicity, non-empty phase list). Throws ConfigError.
void validate_schedule(const Schedule& schedule, int encoder_blocks);

/// Range/positivity checks only; the sliding hier_freeze variant relaxes the
/// inclusion monotonicity by construction.
void validate_schedule_basic(const Schedule& schedule, int encoder_blocks);

/// Step decay: max(lr0 * 0.9^floor(epoch / 2), 1e-8).
double lr_at_epoch(double lr0, int epoch);

std::string schedule_to_json(const Schedule& schedule);
Schedule schedule_from_json(const std::string& text);

}  // namespace cascade
