#include <stdio.h>
#include <string.h>

#include "myoctl.h"

#define CHECK(cond)                                                      \
    do {                                                                 \
        if (!(cond)) {                                                   \
            const char *e = myo_last_error();                            \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, \
                    e ? e : "no error");                                 \
            return 1;                                                    \
        }                                                                \
    } while (0)

static const char *CONFIG =
    "seed = 1\n"
    "autostart = true\n"
    "[[script.segment]]\nstart_ms = 200\nend_ms = 2000\neffort = 0.8\n"
    "[calibration.profile]\nrest_raw = 41\nmvc_raw = 1229\n";

int main(void) {
    MyoEngine *eng = NULL;
    CHECK(myo_engine_new_sim_toml(CONFIG, &eng) == MYO_STATUS_OK);

    uint64_t ran = 0;
    CHECK(myo_engine_step(eng, 1500, &ran) == MYO_STATUS_OK);
    CHECK(ran == 1500);

    MyoFrame f;
    CHECK(myo_engine_last_frame(eng, &f) == MYO_STATUS_OK);
    CHECK(f.t_ms == 1499);
    CHECK(f.reference == 1.0);
    CHECK(f.position > 0.0 && f.position <= 1.0);

    char reply[512];
    size_t need = 0;
    MyoStatus st = myo_engine_command(eng, "{\"type\":\"set_config\",\"patch\":{\"delta\":60}}",
                                      reply, sizeof reply, &need);
    CHECK(st == MYO_STATUS_VALIDATION);
    CHECK(strstr(reply, "\"field\":\"delta\"") != NULL);

    MyoPhase phase;
    CHECK(myo_engine_phase(eng, &phase) == MYO_STATUS_OK);
    CHECK(phase == MYO_PHASE_RUNNING);
    myo_engine_free(eng);

    MyoDeadbandState s = {0.0, 0.0};
    s = myo_deadband_step(s, 10.0, 5.0);
    CHECK(s.r == 5.0);
    CHECK(myo_rescale(95.0, 5.0) == 1.0);
    CHECK(myo_quantize(2.5) == 2048);

    printf("ok\n");
    return 0;
}
