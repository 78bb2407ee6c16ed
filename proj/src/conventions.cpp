#include "s2sk/conventions.hpp"

namespace s2sk {

nlohmann::json conventions() {
  return {
      {"grid",
       {{"latitude_weights", "cos(lat) normalised to mean 1 over latitudes"},
        {"calendar", "366-slot circular day-of-year; slot 59 (Feb 29) skipped in non-leap years"},
        {"latitude_order", "north_to_south"},
        {"longitude_order", "0_to_360_east"},
        {"masked_cells", "excluded; weights renormalised over valid cells"},
        {"climatology_window", "centred circular moving window, default halfwidth 15 days"},
        {"great_circle", "haversine, earth radius 6371 km"}}},
      {"vq",
       {{"stage1_loss", "reconstruction + codebook (additive)"},
        {"commitment_term", "off by default, coefficient 0.25"},
        {"straight_through", "not implemented; losses are evaluators"},
        {"polar_row_mapping", "two southernmost rows averaged (121->120, 31->30), decoder duplicates"},
        {"patching", "p x q patches onto a 30 x 60 latent grid"},
        {"coder", "seeded Gaussian linear patch encoder, pseudoinverse decoder"},
        {"codebook_init", "seeded standard normal; K=512, C_ZA=16, C_ZB=8"},
        {"quantize_tie_rule", "lowest index wins"},
        {"masked_input", "masked cells read as 0 by the encoder"}}},
      {"diffusion",
       {{"prediction_target", "previous noisy latent (x_{n-1} prediction)"},
        {"epsilon_adapter", "available; wraps a noise predictor through the DDPM posterior"},
        {"coupled_noise", "z_{n-1} from base noise, z_n = sqrt(alpha_n) z_{n-1} + sqrt(1 - alpha_n) eta"},
        {"sampler", "strided DDPM ancestral sampling, t_k = floor(N (n_infer - k) / n_infer)"},
        {"default_steps", 1000},
        {"default_schedule", "linear beta 1e-4 .. 0.02"},
        {"default_n_infer", 15},
        {"loss_weighting", "unweighted mean squared error"}}},
      {"coupling",
       {{"apply_operator", "transport-weighted contraction F_target + gain * G_target * F_source S^T"},
        {"marginals", "uniform (latitude-weighted available)"},
        {"epsilon", 0.05},
        {"sinkhorn_domain", "log"},
        {"cost", "1 - cosine similarity; zero-norm sites have similarity 0"},
        {"feature_extractor", "fixed seeded linear maps of [noisy; current; previous] per sphere and direction"},
        {"cross_attention_baseline", "row softmax(F_t^T F_s / sqrt(d_f)) / G_target, same apply path"},
        {"wmid_weights", "centred influence of retained cells with positive centred influence"}}},
      {"rollout",
       {{"latent_rollout", "embed initial states once, roll out in latent space, decode once"},
        {"member_seed", "derive_seed(derive_seed(master, fnv1a(\"rollout/member\")), member_id), splitmix64"},
        {"rng", "mt19937_64 with Marsaglia polar normals and rejection-sampled bounded integers"},
        {"failure_policy", "isolate and report per member"},
        {"initial_conditioning", "true initial states embedded once, predictions thereafter"}}},
      {"verify",
       {{"crps_estimator", "standard (fair available behind a flag)"},
        {"ssr_inflation", "(M+1)/M on the unbiased ensemble variance"},
        {"quantile_rule", "linear interpolation, h = (n-1) p / 100"},
        {"bss_reference", "constant climatological exceedance probability (100 - p) / 100"},
        {"bss_spatial_weighting", "latitude-weighted"},
        {"thresholds", "per calendar day from samples pooled within +-15 days"},
        {"low_confidence_pool", "fewer than 20 samples"},
        {"acc", "latitude-weighted centred spatial correlation per time, averaged over times"},
        {"scorecard", "(baseline - model) / baseline in percent; positive = model better"}}},
      {"attribution",
       {{"shuffle", "spatial permutation of valid cells within each channel"},
        {"shuffle_alternative", "joint permutation across the group's channels and cells"},
        {"shuffle_times", "same permutation for both initial states"},
        {"importance", "per-member wRMSE(shuffled) - wRMSE(baseline) under identical member seeds"}}},
      {"harness",
       {{"tensor_file", "S2SK magic, u16 version 1, u8 dtype, u8 ndim, u64 dims, little-endian row-major"},
        {"reports", "CSV with JSON sidecar"},
        {"synthetic_season", "cos(2 pi ((days since 2000-01-01 - 196) mod 365) / 365) sin(lat)"}}},
  };
}

}  // namespace s2sk
