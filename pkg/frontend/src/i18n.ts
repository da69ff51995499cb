// Bundled direction labels. Hindi and English ship with the app; any other
// locale falls back to English. Full-page translation is out of scope.

export type Lang = "en" | "hi";

export interface DirectionLabels {
  up: string;
  flat: string;
  down: string;
}

const BUNDLES: Record<Lang, DirectionLabels> = {
  en: { up: "Rising", flat: "Steady", down: "Falling" },
  hi: { up: "बढ़ेगा", flat: "स्थिर", down: "गिरेगा" },
};

export const ARROWS = { up: "↑", flat: "→", down: "↓" } as const;

export function pickLang(deviceLocale: string | undefined): Lang {
  return deviceLocale && deviceLocale.toLowerCase().startsWith("hi") ? "hi" : "en";
}

export function directionLabels(lang: Lang): DirectionLabels {
  return BUNDLES[lang] ?? BUNDLES.en;
}
