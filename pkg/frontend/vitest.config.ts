import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    environmentOptions: {
      happyDOM: {
        // integration tests talk to the stub server on an ephemeral local port
        settings: { fetch: { disableSameOriginPolicy: true } },
      },
    },
    include: ["tests/**/*.test.ts"],
  },
});
