pub mod batch_oracle;
