
# process exit codes
exit_ok = 0
exit_config_error = 2
exit_numerical_failure = 3
exit_data_error = 4
# anything the estimation modules did not anticipate
exit_unexpected_error = 5

# every fitted selection probability is kept inside [floor, 1 - floor]
default_probability_floor = 1e-6

# two sided 95% normal quantile used for all Wald intervals
normal_quantile_95 = 1.959964

# current config file schema
config_schema_version = 1

plural = lambda x: "s" if x != 1 else ""
yes_no = lambda x: "Yes" if x else "No"

# EOF
