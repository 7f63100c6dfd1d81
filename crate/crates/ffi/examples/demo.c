/* Minimal client: one question, then step navigation.
 *
 *   cargo build -p stepwise-ffi
 *   cc -Icrates/ffi/include crates/ffi/examples/demo.c \
 *      target/debug/libstepwise_ffi.a -lpthread -ldl -lm -o demo
 */
#include <stdio.h>
#include "stepwise.h"

static int check(SraStatus s) {
    if (s != SRA_STATUS_OK) {
        char *msg = sra_last_error();
        fprintf(stderr, "error %d: %s\n", (int)s, msg ? msg : "?");
        sra_string_free(msg);
        return 1;
    }
    return 0;
}

int main(void) {
    SraEngine *engine = NULL;
    SraSession *session = NULL;
    char *out = NULL;
    const char *requests[] = {
        "{\"kind\":\"request\",\"id\":1,\"op\":\"ask\",\"payload\":{\"question\":\"How do I save?\"}}",
        "{\"kind\":\"request\",\"id\":2,\"op\":\"step_next\"}",
        "{\"kind\":\"request\",\"id\":3,\"op\":\"get_status\"}",
    };
    size_t i;

    if (check(sra_engine_new(NULL, &engine))) return 1;
    if (check(sra_session_new(engine, "demo", &session))) return 1;
    for (i = 0; i < sizeof requests / sizeof requests[0]; i++) {
        if (check(sra_session_request(session, requests[i], &out))) return 1;
        printf("%s\n", out);
        sra_string_free(out);
    }
    sra_session_free(session);
    sra_engine_free(engine);
    printf("stepwise %s\n", sra_version());
    return 0;
}
