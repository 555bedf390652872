#include <math.h>
#include <stdio.h>
#include <string.h>

#include "seal.h"

#define CHECK(expr)                                                           \
    do {                                                                      \
        enum SealStatus st_ = (expr);                                         \
        if (st_ != SEAL_STATUS_OK) {                                          \
            fprintf(stderr, "%s -> %d: %s\n", #expr, (int)st_,                \
                    seal_last_error() ? seal_last_error() : "(none)");        \
            return 1;                                                         \
        }                                                                     \
    } while (0)

static const char *CONFIG =
    "{\"seed\": 5,"
    " \"env\": {\"kind\": \"tabular\", \"preset\": \"chain2\"},"
    " \"data\": {\"trajectories\": 20, \"horizon\": 5, \"gamma\": 0.5},"
    " \"qlearn\": {\"model\": {\"backend\": \"tabular\"}},"
    " \"ratio\": {\"steps\": 10},"
    " \"advantage\": {\"model\": {\"backend\": \"tabular\"}},"
    " \"eval\": {\"mc_episodes\": 50}}";

int main(void) {
    struct SealConfig *cfg = NULL;
    struct SealDataset *data = NULL;
    struct SealReport *report = NULL;
    double v = 0.0;

    if (seal_config_from_json("{\"data\": {\"gamma\": 2}}", &cfg) != SEAL_STATUS_CONFIG_ERROR) {
        fprintf(stderr, "bad gamma accepted\n");
        return 1;
    }
    if (strstr(seal_last_error(), "data.gamma") == NULL) {
        fprintf(stderr, "unexpected message: %s\n", seal_last_error());
        return 1;
    }

    CHECK(seal_config_from_json(CONFIG, &cfg));
    CHECK(seal_dataset_generate(cfg, &data));
    if (seal_dataset_num_trajectories(data) != 20) return 1;
    CHECK(seal_pipeline_run(cfg, data, &report));
    CHECK(seal_report_value(report, SEAL_POLICY_BASELINE, SEAL_METHOD_FQE, &v));
    if (fabs(v - 2.0) > 1e-6) {
        fprintf(stderr, "baseline value %f\n", v);
        return 1;
    }
    printf("baseline %.6f version %s\n", v, seal_version());

    seal_report_free(report);
    seal_dataset_free(data);
    seal_config_free(cfg);
    return 0;
}
