#ifndef TABLESAGE_SYNTH_HPP
#define TABLESAGE_SYNTH_HPP

// Deterministic generator of labelled financial-statement tables with a
// matching row-similarity ground truth.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tablesage/corpus.hpp"
#include "tablesage/eval.hpp"
#include "tablesage/random.hpp"

namespace tablesage {

/// One line item. Rows sharing a concept are ground-truth similar, also
/// across table types.
struct RowTemplate {
  std::string concept_key;
  std::vector<std::string> variants;
};

struct CompanyProfile {
  std::string name;
  // Line items only this company reports, spread evenly through its tables.
  std::map<TableType, std::vector<RowTemplate>> own_rows;
};

struct SyntheticCorpusConfig {
  std::vector<CompanyProfile> companies;
  std::map<TableType, std::vector<std::string>> titles;
  std::map<TableType, std::vector<RowTemplate>> templates;
  int replicates = 4;
  std::uint64_t seed = 42;
  double preferred_variant_probability = 0.85;
  double row_keep_probability = 0.9;
  double value_min = 100;
  double value_max = 99999;
  double negative_probability = 0.15;
  int first_year = 2014;

  void validate() const {
    if (companies.size() < 2) throw Error("synthetic corpus needs at least 2 companies");
    if (replicates < 1) throw Error("synthetic corpus needs at least 1 replicate");
    if (!(value_min < value_max)) throw Error("synthetic value range is empty");
    for (auto t : kAllTableTypes) {
      auto it = templates.find(t);
      if (it == templates.end() || it->second.empty())
        throw Error("synthetic corpus has no templates for " + std::string(to_string(t)));
      for (const auto& r : it->second)
        if (r.variants.empty()) throw Error("template " + r.concept_key + " has no variants");
      auto ti = titles.find(t);
      if (ti == titles.end() || ti->second.empty())
        throw Error("synthetic corpus has no titles for " + std::string(to_string(t)));
    }
  }
};

inline SyntheticCorpusConfig default_synthetic_config() {
  SyntheticCorpusConfig c;
  using T = TableType;
  c.companies = {
      {"Acacia Mining Limited",
       {{T::ProfitOrLoss, {{"acacia_royalties", {"Royalties"}}, {"acacia_exploration_expensed", {"Exploration expenditure written off"}}, {"acacia_ore_processing", {"Ore processing costs"}}}},
        {T::FinancialPosition, {{"acacia_mine_properties", {"Mine properties"}}, {"acacia_exploration_assets", {"Exploration and evaluation assets"}}, {"acacia_rehabilitation", {"Rehabilitation provision"}}}},
        {T::ChangesInEquity, {{"acacia_hedge_reserve", {"Cash flow hedge reserve movement"}}, {"acacia_flow_through", {"Flow-through shares issued"}}, {"acacia_royalty_options", {"Royalty option exercise"}}}},
        {T::CashFlows, {{"acacia_exploration_paid", {"Payments for exploration and evaluation"}}, {"acacia_mine_development", {"Payments for mine development"}}, {"acacia_royalties_paid", {"Royalties paid"}}}}}},
      {"Banksia Energy Ltd",
       {{T::ProfitOrLoss, {{"banksia_gas_sales", {"Gas sales"}}, {"banksia_pipeline_tariffs", {"Pipeline tariff income"}}, {"banksia_carbon_costs", {"Carbon permit costs"}}}},
        {T::FinancialPosition, {{"banksia_oil_gas", {"Oil and gas properties"}}, {"banksia_carbon_permits", {"Carbon permits held"}}, {"banksia_decommissioning", {"Decommissioning liability"}}}},
        {T::ChangesInEquity, {{"banksia_hybrid", {"Hybrid securities distribution"}}, {"banksia_carbon_reserve", {"Carbon permit revaluation"}}, {"banksia_stapled", {"Stapled securities issued"}}}},
        {T::CashFlows, {{"banksia_well_drilling", {"Payments for well drilling"}}, {"banksia_gas_receipts", {"Receipts from gas customers"}}, {"banksia_pipeline_capex", {"Pipeline construction payments"}}}}}},
      {"Coral Sea Holdings",
       {{T::ProfitOrLoss, {{"coral_rental", {"Rental income from investment properties"}}, {"coral_associates", {"Share of profit of associates"}}, {"coral_fair_value", {"Fair value gain on investment properties"}}}},
        {T::FinancialPosition, {{"coral_investment_properties", {"Investment properties"}}, {"coral_associates_equity", {"Investments in associates"}}, {"coral_lease_liabilities", {"Lease liabilities"}}}},
        {T::ChangesInEquity, {{"coral_revaluation", {"Asset revaluation surplus"}}, {"coral_nci", {"Non-controlling interests acquired"}}, {"coral_associate_reserve", {"Share of associate reserves"}}}},
        {T::CashFlows, {{"coral_rent_received", {"Rent received from tenants"}}, {"coral_property_acquired", {"Acquisition of investment properties"}}, {"coral_associate_dividends", {"Dividends received from associates"}}}}}},
      {"Dingo Resources Limited",
       {{T::ProfitOrLoss, {{"dingo_freight", {"Freight and shipping costs"}}, {"dingo_hedging", {"Hedging losses"}}, {"dingo_smelting", {"Smelting and refining charges"}}}},
        {T::FinancialPosition, {{"dingo_stockpiles", {"Ore stockpiles"}}, {"dingo_derivatives", {"Derivative financial instruments"}}, {"dingo_tailings", {"Tailings dam provision"}}}},
        {T::ChangesInEquity, {{"dingo_convertible", {"Conversion of convertible notes"}}, {"dingo_warrants", {"Warrants exercised"}}, {"dingo_fx_reserve", {"Foreign currency translation reserve"}}}},
        {T::CashFlows, {{"dingo_smelter_receipts", {"Receipts from smelter"}}, {"dingo_freight_paid", {"Freight payments"}}, {"dingo_hedge_settlement", {"Hedge settlements paid"}}}}}},
      {"Eucalypt Telecom Group",
       {{T::ProfitOrLoss, {{"eucalypt_subscriptions", {"Subscription revenue"}}, {"eucalypt_network", {"Network operating costs"}}, {"eucalypt_handsets", {"Handset and device costs"}}}},
        {T::FinancialPosition, {{"eucalypt_spectrum", {"Spectrum licences"}}, {"eucalypt_network_assets", {"Network infrastructure"}}, {"eucalypt_deferred_revenue", {"Deferred subscription revenue"}}}},
        {T::ChangesInEquity, {{"eucalypt_buyback", {"On-market share cancellation"}}, {"eucalypt_rights", {"Performance rights vested"}}, {"eucalypt_special_dividend", {"Special dividend declared"}}}},
        {T::CashFlows, {{"eucalypt_subscribers", {"Receipts from subscribers"}}, {"eucalypt_spectrum_paid", {"Payments for spectrum"}}, {"eucalypt_tower_sale", {"Proceeds from tower sale"}}}}}},
  };
  c.titles[T::ProfitOrLoss] = {"Consolidated statement of profit or loss", "Income statement",
                               "Statement of comprehensive income"};
  c.titles[T::FinancialPosition] = {"Consolidated statement of financial position", "Balance sheet",
                                    "Statement of financial position"};
  c.titles[T::ChangesInEquity] = {"Consolidated statement of changes in equity", "Statement of changes in equity",
                                  "Changes in equity"};
  c.titles[T::CashFlows] = {"Consolidated statement of cash flows", "Cash flow statement",
                            "Statement of cash flows"};

  c.templates[T::ProfitOrLoss] = {
      {"revenue", {"Revenue from contracts with customers", "Sales revenue", "Turnover"}},
      {"other_income", {"Other income", "Other revenue", "Sundry income"}},
      {"cost_of_sales", {"Cost of sales", "Cost of goods sold", "Direct costs"}},
      {"gross_profit", {"Gross profit", "Gross margin", "Trading profit"}},
      {"employee_costs", {"Employee benefits expense", "Salaries and wages", "Staff costs"}},
      {"depreciation", {"Depreciation and amortisation expense", "Depreciation and amortization",
                        "Amortisation and depreciation charges"}},
      {"finance_costs", {"Finance costs", "Interest expense", "Borrowing costs"}},
      {"admin_expenses", {"Administrative expenses", "General and administration costs", "Corporate overheads"}},
      {"impairment", {"Impairment of assets", "Impairment losses", "Asset write-downs"}},
      {"profit_before_tax", {"Profit before income tax", "Profit before tax", "Earnings before taxation"}},
      {"income_tax", {"Income tax expense", "Tax expense", "Income tax charge"}},
      {"profit_for_year", {"Profit for the year", "Net profit after tax", "Net income for the period"}},
      {"oci", {"Other comprehensive income", "Other comprehensive income net of tax",
               "Items of other comprehensive income"}},
      {"total_ci", {"Total comprehensive income for the year", "Total comprehensive income",
                    "Comprehensive income attributable to members"}},
      {"eps", {"Basic earnings per share (cents)", "Earnings per share basic", "Basic EPS (cents per share)"}},
  };
  c.templates[T::FinancialPosition] = {
      {"cash", {"Cash and cash equivalents", "Cash at bank", "Cash and deposits"}},
      {"receivables", {"Trade and other receivables", "Receivables", "Debtors"}},
      {"inventories", {"Inventories", "Stock on hand", "Inventory"}},
      {"current_assets", {"Total current assets", "Current assets", "Aggregate current assets"}},
      {"ppe", {"Property, plant and equipment", "Plant and equipment", "Fixed assets"}},
      {"intangibles", {"Intangible assets", "Goodwill and intangibles", "Intangibles"}},
      {"total_assets", {"Total assets", "Assets", "Aggregate assets"}},
      {"payables", {"Trade and other payables", "Payables", "Creditors"}},
      {"borrowings", {"Borrowings", "Interest-bearing loans", "Bank loans"}},
      {"provisions", {"Provisions", "Employee provisions", "Provisions for liabilities"}},
      {"total_liabilities", {"Total liabilities", "Liabilities", "Aggregate liabilities"}},
      {"net_assets", {"Net assets", "Net worth", "Total net assets"}},
      {"issued_capital", {"Issued capital", "Contributed equity", "Share capital"}},
      {"reserves", {"Reserves", "Other reserves", "Equity reserves"}},
      {"retained_earnings", {"Retained earnings", "Accumulated profits", "Retained profits"}},
  };
  c.templates[T::ChangesInEquity] = {
      {"opening_balance", {"Balance at 1 July", "Opening balance", "Balance at beginning of year"}},
      {"profit_for_year", {"Profit for the year", "Net profit after tax", "Net income for the period"}},
      {"oci", {"Other comprehensive income", "Other comprehensive income net of tax",
               "Items of other comprehensive income"}},
      {"total_ci", {"Total comprehensive income for the year", "Total comprehensive income",
                    "Comprehensive income attributable to members"}},
      {"dividends", {"Dividends paid", "Dividends provided for or paid", "Distributions to shareholders"}},
      {"shares_issued", {"Shares issued during the year", "Issue of share capital", "Contributions of equity"}},
      {"share_based_payments", {"Share-based payments", "Employee share scheme expense", "Options expense"}},
      {"transaction_costs", {"Transaction costs", "Capital raising costs", "Share issue costs"}},
      {"reserve_transfers", {"Transfer to reserves", "Transfers between reserves", "Reserve transfers"}},
      {"buy_back", {"Buy-back of shares", "Share buy-back", "Shares repurchased"}},
      {"fx_translation", {"Foreign currency translation", "Exchange differences on translation",
                          "Currency translation movement"}},
      {"treasury_shares", {"Treasury shares acquired", "Purchase of treasury shares", "Own shares acquired"}},
      {"drp", {"Dividend reinvestment plan", "Shares issued under DRP", "Dividend reinvestment"}},
      {"owner_transactions", {"Total transactions with owners", "Transactions with owners in their capacity as owners",
                              "Owner transactions total"}},
      {"closing_balance", {"Balance at 30 June", "Closing balance", "Balance at end of year"}},
  };
  c.templates[T::CashFlows] = {
      {"receipts", {"Receipts from customers", "Cash receipts from customers", "Receipts from trade debtors"}},
      {"payments", {"Payments to suppliers and employees", "Cash paid to suppliers and employees",
                    "Payments to creditors and staff"}},
      {"interest_received", {"Interest received", "Interest income received", "Bank interest received"}},
      {"interest_paid", {"Interest paid", "Finance costs paid", "Borrowing costs paid"}},
      {"tax_paid", {"Income taxes paid", "Tax paid", "Income tax payments"}},
      {"operating_cash", {"Net cash from operating activities", "Net cash inflow from operating activities",
                          "Operating cash flow"}},
      {"capex", {"Purchase of property, plant and equipment", "Payments for plant and equipment",
                 "Capital expenditure"}},
      {"asset_sales", {"Proceeds from sale of assets", "Proceeds from disposal of plant and equipment",
                       "Asset sale proceeds"}},
      {"investing_cash", {"Net cash used in investing activities", "Net investing cash flows",
                          "Cash outflow from investing activities"}},
      {"loans_drawn", {"Proceeds from borrowings", "Loans drawn down", "Borrowings received"}},
      {"loan_repayments", {"Repayment of borrowings", "Loan repayments", "Repayments of debt"}},
      {"dividends", {"Dividends paid", "Dividends provided for or paid", "Distributions to shareholders"}},
      {"financing_cash", {"Net cash from financing activities", "Net financing cash flows",
                          "Cash flows from financing activities"}},
      {"net_change_cash", {"Net increase in cash held", "Net change in cash and cash equivalents",
                           "Increase in cash during the year"}},
      {"closing_cash", {"Cash at the end of the year", "Closing cash and cash equivalents", "Cash at end of period"}},
  };
  return c;
}

struct SyntheticFile {
  std::string name;  // relative to the corpus directory
  std::string content;
};

struct SyntheticCorpus {
  CorpusManifest manifest;
  std::vector<SyntheticFile> tables;
  RowSimGroundTruth ground_truth;
};

namespace detail {

inline std::string format_amount(long long v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return v < 0 ? "(" + out + ")" : out;
}

inline const std::vector<std::string>& company_styles() {
  static const std::vector<std::string> styles = {
      "table.fs { font-family: Georgia, serif; border-collapse: collapse; }\n"
      "table.fs th { border-bottom: 2px solid #1d3557; }\ntable.fs td.n { text-align: right; }",
      "table.fs { font-family: Arial, sans-serif; font-size: 12px; }\n"
      "table.fs tr:nth-child(even) { background: #f2f2f2; }\ntable.fs td.n { text-align: right; }",
      "table.fs { font-family: Verdana, sans-serif; }\ntable.fs th { color: #2a9d8f; }\n"
      "table.fs td.n { text-align: right; padding-left: 1em; }",
      "table.fs { font-family: 'Times New Roman', serif; border: 1px solid #999; }\n"
      "table.fs td.n { text-align: right; font-variant-numeric: tabular-nums; }",
      "table.fs { font-family: Helvetica, sans-serif; }\ntable.fs th { background: #264653; color: #fff; }\n"
      "table.fs td.n { text-align: right; }",
  };
  return styles;
}

}  // namespace detail

/// Tables are numbered T01, T02, ... in (company, type, replicate) order. Row
/// ordinals: 0 title, 1 year header, 2 units, then the kept line items.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticCorpus out;

  // Preferred wording per company: one title and one variant per template.
  std::map<std::pair<std::size_t, TableType>, std::size_t> preferred_title;
  std::map<std::tuple<std::size_t, TableType, std::size_t>, std::size_t> preferred_variant;
  for (std::size_t c = 0; c < cfg.companies.size(); ++c)
    for (auto t : kAllTableTypes) {
      preferred_title[{c, t}] = rng.below(cfg.titles.at(t).size());
      const auto& tpl = cfg.templates.at(t);
      for (std::size_t i = 0; i < tpl.size(); ++i) preferred_variant[{c, t, i}] = rng.below(tpl[i].variants.size());
    }
  auto pick = [&](std::size_t preferred, std::size_t n) -> std::size_t {
    if (n == 1 || rng.uniform() < cfg.preferred_variant_probability) return preferred;
    const auto other = rng.below(n - 1);
    return other >= preferred ? other + 1 : other;
  };

  const std::size_t total = cfg.companies.size() * kAllTableTypes.size() * static_cast<std::size_t>(cfg.replicates);
  const int width = std::max<int>(2, static_cast<int>(std::to_string(total).size()));
  std::map<std::string, std::vector<RowRef>> by_concept;
  std::size_t serial = 0;

  for (std::size_t c = 0; c < cfg.companies.size(); ++c) {
    const auto& company = cfg.companies[c].name;
    const bool note_column = c % 2 == 0;
    const auto& style = detail::company_styles()[c % detail::company_styles().size()];
    for (auto t : kAllTableTypes) {
      for (int rep = 0; rep < cfg.replicates; ++rep) {
        std::string id = std::to_string(++serial);
        id = "T" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
        const int year = cfg.first_year + rep;
        const int cols = note_column ? 4 : 3;
        int ordinal = 0;
        auto link = [&](const std::string& key) { by_concept[key].push_back({id, ordinal}); };

        std::string rows;
        const auto& titles = cfg.titles.at(t);
        const auto title = titles[pick(preferred_title.at({c, t}), titles.size())];
        rows += "<tr><th colspan=\"" + std::to_string(cols) + "\">" + html::escape(company + " " + title) +
                "</th></tr>\n";
        link("title:" + std::string(to_string(t)));
        ++ordinal;

        rows += "<tr><th></th>";
        if (note_column) rows += "<th>Note</th>";
        rows += "<th>" + std::to_string(year) + "</th><th>" + std::to_string(year - 1) + "</th></tr>\n";
        link("years");
        ++ordinal;

        rows += "<tr><td></td>";
        if (note_column) rows += "<td></td>";
        rows += "<td class=\"n\">$'000</td><td class=\"n\">$'000</td></tr>\n";
        link("units");
        ++ordinal;

        const auto& tpl = cfg.templates.at(t);
        std::vector<std::pair<const RowTemplate*, std::size_t>> items;
        for (std::size_t i = 0; i < tpl.size(); ++i)
          items.emplace_back(&tpl[i], preferred_variant.at({c, t, i}));
        if (auto own = cfg.companies[c].own_rows.find(t); own != cfg.companies[c].own_rows.end()) {
          const auto k = own->second.size();
          for (std::size_t j = k; j-- > 0;) {
            const auto at = j * tpl.size() / k;
            items.insert(items.begin() + static_cast<std::ptrdiff_t>(at), {&own->second[j], 0});
          }
        }
        for (const auto& [item, preferred] : items) {
          if (rng.uniform() >= cfg.row_keep_probability) continue;
          const auto& label = item->variants[pick(preferred, item->variants.size())];
          rows += "<tr><td>" + html::escape(label) + "</td>";
          if (note_column) {
            rows += "<td class=\"n\">";
            if (rng.uniform() < 0.3) rows += std::to_string(1 + rng.below(30));
            rows += "</td>";
          }
          for (int k = 0; k < 2; ++k) {
            auto v = static_cast<long long>(std::llround(rng.uniform(cfg.value_min, cfg.value_max)));
            if (rng.uniform() < cfg.negative_probability) v = -v;
            rows += "<td class=\"n\">" + detail::format_amount(v) + "</td>";
          }
          rows += "</tr>\n";
          link(item->concept_key);
          ++ordinal;
        }

        std::string doc = "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" + html::escape(id) +
                          "</title>\n<style>\n" + style + "\n</style>\n</head>\n<body>\n<table class=\"fs\">\n" +
                          rows + "</table>\n</body>\n</html>\n";
        const auto file = "tables/" + id + ".html";
        out.tables.push_back({file, std::move(doc)});
        out.manifest.entries.push_back({file, t, company});
      }
    }
  }

  for (const auto& [key, refs] : by_concept)
    for (const auto& q : refs)
      for (const auto& r : refs)
        if (r.table_id != q.table_id) out.ground_truth[q].insert(r);
  return out;
}

/// Writes tables/, manifest.csv and ground_truth.txt under dir.
inline void write_synthetic_corpus(const SyntheticCorpus& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tables");
  for (const auto& f : sc.tables) detail::write_file(dir / f.name, f.content);
  detail::write_file(dir / "manifest.csv", format_manifest(sc.manifest));
  detail::write_file(dir / "ground_truth.txt", format_ground_truth(sc.ground_truth));
}

}  // namespace tablesage

#endif  // TABLESAGE_SYNTH_HPP
