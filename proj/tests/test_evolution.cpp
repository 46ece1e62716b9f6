#include <doctest.h>

#include <cstdlib>

#include "msrepaint/multiview.hpp"
#include "msrepaint/network.hpp"
#include "msrepaint/phantom.hpp"

using namespace msrepaint;

// Needs a trained checkpoint; ctest points MSREPAINT_TEST_CHECKPOINT at the
// one produced by the training fixture.
TEST_CASE("shrinking evolution keeps hyperintensity inside the target") {
    const char* ckpt = std::getenv("MSREPAINT_TEST_CHECKPOINT");
    if (!ckpt) {
        MESSAGE("MSREPAINT_TEST_CHECKPOINT not set; skipped");
        return;
    }
    const ConvDenoiser net = ConvDenoiser::load(ckpt);
    const NoiseSchedule sched(net.config().schedule_steps, net.config().schedule_offset);
    SamplerConfig cfg;
    cfg.subsequence = build_subsequence(sched.steps(), 10);
    cfg.truncation_tau = 40;
    cfg.clip_x0 = 1.0;

    const auto profiles = default_contrast_profiles();
    const int flair = 2;
    REQUIRE(profiles[flair].name == "flair");
    const double nawm_mean = profiles[flair].wm.mean;
    const double threshold = 0.5 * (nawm_mean + profiles[flair].lesion_mean());

    std::size_t inside_hot = 0, inside_n = 0, outside_hot = 0, outside_n = 0;
    for (std::uint64_t seed : {31u, 32u, 33u}) {
        PhantomConfig pc;
        pc.seed = seed;
        pc.radius_min = 2.5;
        pc.radius_max = 3.0;
        const Phantom ph = make_phantom(pc);
        // Target: lesions eroded by one voxel; repaint: the old lesions.
        MaskVolume outside_lesions = ph.lesions;
        for (auto& v : outside_lesions.storage()) v = !v;
        MaskVolume target = dilate(outside_lesions, 1);
        for (auto& v : target.storage()) v = !v;
        REQUIRE(count_foreground(target) > 0);
        cfg.seed = seed;
        const auto r = run_multiview(ph.lesioned, RepaintMasks::evolution(target, ph.lesions), cfg, net, sched);
        const Volume& out = r.fused.channel(flair).volume;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (target[i]) {
                ++inside_n;
                inside_hot += out[i] > threshold;
            } else if (ph.lesions[i]) {
                ++outside_n;
                outside_hot += out[i] > threshold;
            }
        }
    }
    const double in_frac = double(inside_hot) / double(inside_n), out_frac = double(outside_hot) / double(outside_n);
    MESSAGE("hyperintense fraction inside target " << in_frac << ", in the shrunk-away ring " << out_frac);
    CHECK(in_frac > 0.5);
    CHECK(out_frac < 0.1);
}
