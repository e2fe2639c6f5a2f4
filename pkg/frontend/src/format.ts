/** Display formatting: every value shown is a server number, rounded for
 * reading.  RISK_DIGITS/VALUE_DIGITS define the "displayed precision"
 * that tests compare against. */

export const RISK_DIGITS = 3;
export const VALUE_DIGITS = 2;

export function formatRisk(value: number): string {
  return value.toFixed(RISK_DIGITS);
}

export function formatValue(value: number): string {
  return value.toFixed(VALUE_DIGITS);
}

export function formatPercent(value: number): string {
  return `${(100 * value).toFixed(1)}%`;
}
