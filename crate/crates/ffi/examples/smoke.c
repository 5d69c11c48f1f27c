/* Loads a site spec file and prints how many pages are reachable.
 *
 *   cargo build -p sitewalk-ffi
 *   cc crates/ffi/examples/smoke.c -Icrates/ffi/include \
 *      target/debug/libsitewalk_ffi.a -lpthread -ldl -lm -o smoke
 *   ./smoke crates/core/fixtures/sites/shop-12.toml
 */
#include <stdio.h>

#include "sitewalk.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s SITE.toml\n", argv[0]);
        return 2;
    }
    SwSite *site = NULL;
    if (sw_site_load_file(argv[1], &site) != SW_STATUS_OK) {
        fprintf(stderr, "error: %s\n", sw_last_error());
        return 1;
    }
    char *id = NULL;
    size_t pages = 0;
    sw_site_id(site, &id);
    sw_site_reachable_pages(site, &pages);
    printf("%s: %zu reachable pages (sitewalk %s)\n", id, pages, sw_version());
    sw_string_free(id);
    sw_site_free(site);
    return 0;
}
