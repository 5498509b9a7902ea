#pragma once

#include <optional>
#include <string>

#include "../pointcloud.hpp"

namespace nudge {

enum class AttackMode { untargeted, targeted };

inline const char* to_string(AttackMode m) { return m == AttackMode::untargeted ? "untargeted" : "targeted"; }

/// Outcome of attacking one cloud.
struct AttackResult {
    std::size_t sample_id = 0;
    int true_label = -1;
    int pred_before = -1;
    int pred_after = -1;
    std::optional<int> target_class;
    bool success = false;
    double l2 = 0;
    double linf = 0;
    std::size_t edited = 0;
    std::size_t queries = 0; // model queries spent by a grey-box attack
    std::string error;       // set when the attack failed for this sample
    double seconds = 0;      // wall time; kept out of deterministic reports
    PointCloud<float> adversarial;
};

/// Untargeted: the prediction changed. Targeted: the prediction is the target.
inline bool attack_succeeded(AttackMode mode, int before, int after, std::optional<int> target) {
    return mode == AttackMode::untargeted ? after != before : (target && after == *target);
}

template <std::floating_point Real>
void fill_norms(AttackResult& r, const PointCloud<Real>& original, const PointCloud<Real>& adversarial) {
    const auto n = perturbation_norms(original, adversarial);
    r.l2 = n.l2;
    r.linf = n.linf;
    r.edited = n.edited;
}

} // namespace nudge
